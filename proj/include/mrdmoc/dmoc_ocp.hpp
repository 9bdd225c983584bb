#pragma once

/**
 * @file dmoc_ocp.hpp
 * @brief Multirate DMOC: rest-to-rest maneuver as a sparse equality-constrained QP.
 *
 * Decision vector, interleaved by macro interval k:
 *
 *     [ q^s_k, p^s_k | (q^f_j, p^f_j) for j = kp .. kp+p-1 | tau_{kp} .. tau_{kp+p-1} ]
 *
 * followed by the terminal nodes (q^s, p^s at n_s and q^f, p^f at micro node
 * n_s p). Node momenta are unknowns; each macro interval contributes its left
 * and right discrete Legendre transforms as equality rows tying them to the
 * node momenta. Equating the transforms of neighbouring intervals through the
 * shared momentum slot is the discrete forced Euler-Lagrange system, and the
 * velocity boundary conditions become plain rows on the end momenta.
 */

#include "mrdmoc/multirate_integrator.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <string>
#include <vector>

namespace mrdmoc {

struct CostWeights {
    Eigen::MatrixXd state;  // W over [q; qdot] in modal coordinates, 2(N+1) square
    double control = 1.0;
};

/// Midpoint-rule cost of one macro step: dt * sum_m [1/2 xbar_m^T W xbar_m + 1/2 rho tau_m^2],
/// xbar_m = [slow interpolant; fast average; slow velocity; fast velocity] at micro midpoint m.
double discrete_cost(const ModalSystem& msys, const MultirateGrid& grid, const Eigen::VectorXd& slow_k,
                     const Eigen::VectorXd& slow_k1, const Eigen::MatrixXd& fast_k, const Eigen::VectorXd& tau_k,
                     const CostWeights& weights);

struct OcpSpec {
    ModalSystem msys;
    MultirateGrid grid;
    Eigen::VectorXd xi_start;      // physical configuration at t0
    Eigen::VectorXd xi_end;        // physical configuration at tf
    Eigen::VectorXd xi_dot_start;  // empty means zero
    Eigen::VectorXd xi_dot_end;    // empty means zero
    Eigen::MatrixXd state_weight;  // empty means identity
    double control_weight = 1.0;

    /// Rest-to-rest hub rotation from 0 to theta_deg with quiescent appendage.
    static OcpSpec rest_to_rest(const ModalSystem& msys, const MultirateGrid& grid, double theta_deg);

    /// Throws ConfigError on dimension or weight problems.
    void validate() const;
    CostWeights weights() const;
};

/// Index map of the decision vector and constraint rows.
class VariableLayout {
public:
    VariableLayout() = default;
    VariableLayout(int num_slow, int num_fast, int macro_count, int micro_count);

    int num_slow() const { return r_; }
    int num_fast() const { return nf_; }
    int macro_count() const { return ns_; }
    int micro_count() const { return p_; }

    Eigen::Index slow_q(int k, int i) const { return node_offset(k) + i; }
    Eigen::Index slow_p(int k, int i) const { return node_offset(k) + r_ + i; }
    Eigen::Index fast_q(int j, int i) const { return fast_offset(j) + i; }
    Eigen::Index fast_p(int j, int i) const { return fast_offset(j) + nf_ + i; }
    Eigen::Index tau(int j) const { return (j / p_) * block_ + 2 * r_ + 2 * nf_ * p_ + j % p_; }

    /// Counts taken from the layout itself.
    Eigen::Index n_slow_var() const { return 2L * r_ * (ns_ + 1); }
    Eigen::Index n_fast_var() const { return 2L * nf_ * (static_cast<long>(ns_) * p_ + 1) + static_cast<long>(ns_) * p_; }
    Eigen::Index n_total_var() const { return n_slow_var() + n_fast_var(); }
    /// Legendre rows of every interval plus the four boundary blocks.
    Eigen::Index n_eq_con() const { return static_cast<Eigen::Index>(ns_) * rows_per_interval() + 4L * (r_ + nf_); }
    Eigen::Index rows_per_interval() const { return 2L * r_ + 2L * nf_ * p_; }

    /// Closed-form size formulas, evaluated from (p, r, N, tf, dt).
    static long formula_slow_var(int p, int r, int num_modes, double tf, double dt);
    static long formula_fast_var(int r, int num_modes, double tf, double dt);
    static long formula_eq_con(int p, int r, int num_modes, double tf, double dt);

private:
    Eigen::Index node_offset(int k) const { return static_cast<Eigen::Index>(k) * block_; }
    Eigen::Index fast_offset(int j) const {
        const int k = j / p_;
        const int m = j % p_;
        return node_offset(k) + 2 * r_ + 2L * nf_ * m;
    }

    int r_ = 0;
    int nf_ = 0;
    int ns_ = 0;
    int p_ = 1;
    Eigen::Index block_ = 0;
};

struct QpProblem {
    Eigen::SparseMatrix<double> hessian;      // H, symmetric, full storage
    Eigen::SparseMatrix<double> constraints;  // A
    Eigen::VectorXd rhs;                      // b
    Eigen::VectorXd linear;                   // g
};

/// Auto factors in double and repeats in long double when the residual
/// targets are missed; short horizons make A nearly rank deficient.
enum class KktPrecision { Auto, Double, Extended };

struct KktOptions {
    double regularization = 1e-10;  // quasi-definite shift, used only if the plain factorization fails
    int max_refinement = 3;
    double tolerance = 1e-8;
    int equilibration_passes = 10;
    KktPrecision precision = KktPrecision::Auto;
};

struct KktResult {
    Eigen::VectorXd primal;
    Eigen::VectorXd multipliers;
    double primal_residual = 0.0;  // ||Az - b|| / (1 + ||b||)
    /// max_i |Hz + g + A^T nu|_i / (1 + (|H||z|)_i + |g_i| + (|A^T||nu|)_i)
    double stationarity_residual = 0.0;
    /// ||Hz + g + A^T nu|| / (1 + max(||Hz||, ||g||, ||A^T nu||)); limited by
    /// cancellation when the multipliers dwarf the gradient they balance.
    double stationarity_normwise = 0.0;
    int refinement_passes = 0;
    double regularization = 0.0;
    bool extended_precision = false;
    bool converged = false;
};

/// Solves [[H, A^T], [A, 0]] [z; nu] = [-g; b]. Throws NumericError on
/// factorization breakdown or structurally empty constraint rows.
KktResult solve_kkt(const QpProblem& qp, const KktOptions& options = {});

struct AssembledOcp {
    QpProblem qp;
    VariableLayout layout;
};

AssembledOcp assemble(const OcpSpec& spec);

struct OcpSolution {
    MultirateTrajectory trajectory;
    Eigen::MatrixXd slow_momentum;  // r x (n_s + 1)
    Eigen::MatrixXd fast_momentum;  // nf x (n_s p + 1)
    Eigen::VectorXd multipliers;
    double cost = 0.0;
    double primal_residual = 0.0;
    double stationarity_residual = 0.0;
    double stationarity_normwise = 0.0;
    double integrator_residual = 0.0;  // Euler-Lagrange re-check through the stepper
    double regularization = 0.0;
    int refinement_passes = 0;
    bool extended_precision = false;
    bool converged = false;
    std::vector<std::string> warnings;
    VariableLayout layout;
};

/// Sum of discrete_cost over the trajectory.
double trajectory_cost(const ModalSystem& msys, const MultirateTrajectory& traj, const CostWeights& weights);

OcpSolution extract_solution(const OcpSpec& spec, const AssembledOcp& problem, const KktResult& kkt);

/// assemble + solve_kkt + extract, with the integrator residual re-check.
OcpSolution solve_maneuver(const OcpSpec& spec, const KktOptions& options = {});

}  // namespace mrdmoc
