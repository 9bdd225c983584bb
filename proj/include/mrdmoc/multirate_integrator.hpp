#pragma once

/**
 * @file multirate_integrator.hpp
 * @brief Forced multirate variational integrator on macro/micro time grids.
 *
 * Slow modal coordinates q^s live on macro nodes t_k = t0 + k*dT, fast
 * coordinates q^f on micro nodes t_k^m = t_k + m*dt with dT = p*dt. Both are
 * piecewise linear in time; controls are piecewise constant on micro
 * intervals. The discrete Lagrangian of one macro step applies the midpoint
 * rule on every micro interval, with the slow interpolant evaluated at the
 * micro midpoints (weight (2m+1)/(2p) on q^s_{k+1}).
 *
 * Storage of fast nodes is global: column k*p + m of the fast matrix is
 * q^{f,m}_k, so the macro-boundary identification q^{f,p}_k == q^{f,0}_{k+1}
 * is structural.
 */

#include "mrdmoc/modal_transform.hpp"

#include <Eigen/Dense>

#include <vector>

namespace mrdmoc {

struct MultirateGrid {
    double t0 = 0.0;
    double tf = 0.0;
    double micro_step = 0.0;  // dt
    double macro_step = 0.0;  // dT = p * dt
    int micro_count = 1;      // p
    int macro_count = 0;      // n_s

    /// Builds the grid from dt and p. Throws ConfigError unless (tf - t0) / (p dt)
    /// is an integer to 1e-9 relative.
    static MultirateGrid from_micro_step(double t0, double tf, double dt, int p);

    int num_micro_intervals() const { return macro_count * micro_count; }
    int num_micro_nodes() const { return num_micro_intervals() + 1; }
    double macro_time(int k) const { return t0 + k * macro_step; }
    double micro_time(int k, int m) const { return t0 + k * macro_step + m * micro_step; }
    /// Weight of q^s_{k+1} in the slow interpolant at the midpoint of micro interval m.
    double slow_midpoint_weight(int m) const { return (2.0 * m + 1.0) / (2.0 * micro_count); }
};

struct MultirateTrajectory {
    MultirateGrid grid;
    Eigen::MatrixXd slow;     // r x (n_s + 1)
    Eigen::MatrixXd fast;     // (N+1-r) x (n_s p + 1)
    Eigen::VectorXd control;  // n_s p, entry k p + m is tau_k^{m+1/2}

    MultirateTrajectory() = default;
    MultirateTrajectory(const MultirateGrid& g, int num_slow, int num_fast);

    int num_slow() const { return static_cast<int>(slow.rows()); }
    int num_fast() const { return static_cast<int>(fast.rows()); }

    /// Fast nodes of macro interval k as an (N+1-r) x (p+1) block.
    auto fast_block(int k) { return fast.middleCols(k * grid.micro_count, grid.micro_count + 1); }
    auto fast_block(int k) const {
        return fast.middleCols(k * grid.micro_count, grid.micro_count + 1);
    }
    auto control_block(int k) const { return control.segment(k * grid.micro_count, grid.micro_count); }

    /// Full modal configuration [q^s_k; q^{f,0}_k] at macro node k.
    Eigen::VectorXd modal_config(int k) const;
};

/// Gradients of the discrete Lagrangian with respect to its three slots.
struct SlotDerivatives {
    Eigen::VectorXd slow_left;   // D_{q^s_k}
    Eigen::VectorXd slow_right;  // D_{q^s_{k+1}}
    Eigen::MatrixXd fast;        // column m: D_{q^{f,m}_k}, m = 0..p
};

/// Discrete left/right forces of one macro step.
struct DiscreteForces {
    Eigen::VectorXd slow_left;
    Eigen::VectorXd slow_right;
    Eigen::MatrixXd fast_left;   // column m: f^{f,m-}
    Eigen::MatrixXd fast_right;  // column m: f^{f,m+}
};

/// Discrete Legendre transforms of one macro step (left and right momenta).
struct StepMomenta {
    Eigen::VectorXd slow_left;   // p^{s-}_k
    Eigen::VectorXd slow_right;  // p^{s+}_{k+1}
    Eigen::MatrixXd fast_left;   // column m: p^{f,m-}_k, m = 0..p-1
    Eigen::MatrixXd fast_right;  // column m: p^{f,m+1,+}_k, m = 0..p-1
};

double discrete_lagrangian(const ModalSystem& msys, const MultirateGrid& grid,
                           const Eigen::VectorXd& slow_k, const Eigen::VectorXd& slow_k1,
                           const Eigen::MatrixXd& fast_k);

SlotDerivatives slot_derivatives(const ModalSystem& msys, const MultirateGrid& grid,
                                 const Eigen::VectorXd& slow_k, const Eigen::VectorXd& slow_k1,
                                 const Eigen::MatrixXd& fast_k);

DiscreteForces discrete_forces(const ModalSystem& msys, const MultirateGrid& grid,
                               const Eigen::VectorXd& tau_k);

StepMomenta step_momenta(const ModalSystem& msys, const MultirateGrid& grid,
                         const Eigen::VectorXd& slow_k, const Eigen::VectorXd& slow_k1,
                         const Eigen::MatrixXd& fast_k, const Eigen::VectorXd& tau_k);

struct StepResult {
    Eigen::VectorXd slow_next;  // q^s_{k+1}
    Eigen::MatrixXd fast;       // q^f_k, (N+1-r) x (p+1); column 0 is the shared node
    int newton_iterations = 0;
    double residual = 0.0;
};

/// Newton settings for the per-macro-step residual solve.
struct NewtonOptions {
    double tolerance = 1e-12;  // on ||R||_inf / (1 + ||rhs||_inf)
    int max_iterations = 20;
};

/// Advances one macro step with the forced multirate discrete Euler-Lagrange
/// equations, given macro step k-1 (slow nodes and fast block) and q^s_k.
StepResult step(const ModalSystem& msys, const MultirateGrid& grid,
                const Eigen::VectorXd& slow_prev, const Eigen::VectorXd& slow_cur,
                const Eigen::MatrixXd& fast_prev, const Eigen::VectorXd& tau_prev,
                const Eigen::VectorXd& tau_cur, const NewtonOptions& options = {});

/// First macro step from configuration and conjugate momenta at t0.
StepResult start_step(const ModalSystem& msys, const MultirateGrid& grid, const ModalState& initial,
                      const Eigen::VectorXd& tau_first, const NewtonOptions& options = {});

/// Marches the whole horizon. Controls are sized n_s * p (zeros for free response).
MultirateTrajectory simulate(const ModalSystem& msys, const MultirateGrid& grid,
                             const ModalState& initial, const Eigen::VectorXd& controls,
                             const NewtonOptions& options = {});

/// Conjugate momenta at macro node k: [p^s_k; p^{f}_k], taken from the left
/// transform at k = 0 and from the right transform otherwise.
Eigen::VectorXd node_momentum(const ModalSystem& msys, const MultirateTrajectory& traj, int k);

struct Diagnostics {
    std::vector<double> time;    // macro node times
    std::vector<double> energy;  // 1/2 p^T p + 1/2 q^T Lambda q
    std::vector<double> p_theta; // hub angular momentum
    std::vector<double> noether; // Psi_d^k
    // Energy of the piecewise-linear discrete path per macro interval: slow modes
    // use the macro-interval velocity and midpoint, fast modes the mean over the
    // micro intervals of their velocity and midpoint.
    std::vector<double> interval_time;  // macro interval midpoints
    std::vector<double> interval_energy;
};

Diagnostics diagnostics(const ModalSystem& msys, const MultirateTrajectory& traj);

/// Largest mismatch of left/right momenta at interior nodes (slow macro nodes
/// and every interior fast micro node), relative to 1 + max |momentum|.
double momentum_mismatch(const ModalSystem& msys, const MultirateTrajectory& traj);

/// Largest residual of the discrete forced Euler-Lagrange equations over the
/// trajectory, each equation scaled by 1 + the magnitude of its terms.
double euler_lagrange_residual(const ModalSystem& msys, const MultirateTrajectory& traj);

}  // namespace mrdmoc
