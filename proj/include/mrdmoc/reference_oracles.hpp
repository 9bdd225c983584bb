#pragma once

/**
 * @file reference_oracles.hpp
 * @brief Ground-truth generators and error metrics.
 *
 * Closed-form free response of the decoupled modal equations, the continuous
 * LQ rest-to-rest problem solved exactly through the Hamiltonian
 * state-transition matrix, a refined single-rate DMOC solve, a fixed-step RK4
 * baseline, and max-over-nodes error reports.
 */

#include "mrdmoc/dmoc_ocp.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace mrdmoc {

/// Exact unforced modal motion at time t >= 0 (per mode: harmonic, or free drift if lambda == 0).
ModalState free_response(const ModalSystem& msys, const ModalState& initial, double t);

/// 1/2 qdot^T qdot + 1/2 q^T Lambda q.
double modal_energy(const ModalSystem& msys, const ModalState& state);

/// Classical RK4 on qddot = -Lambda q + Z tau with tau held constant per step.
/// Columns are the states at t = k dt, k = 0..steps.
struct Rk4Run {
    Eigen::MatrixXd q;
    Eigen::MatrixXd qdot;
};
Rk4Run rk4_simulate(const ModalSystem& msys, const ModalState& initial, double dt, int steps,
                    const Eigen::VectorXd& controls = {});

struct LqSeries {
    std::vector<double> times;
    Eigen::MatrixXd state;    // 2(N+1) x times
    Eigen::MatrixXd costate;  // 2(N+1) x times
    Eigen::VectorXd control;
    double cost = 0.0;
};

/// Continuous LQ optimal control of the modal system, x = [q; qdot]:
///   xdot = A x + B u,   costate' = -W x - A^T costate,   u = -B^T costate / rho.
class LqTpbvp {
public:
    /// Throws NumericError when the boundary solve is too ill-conditioned (> 1e12).
    explicit LqTpbvp(const OcpSpec& spec);

    double t0() const { return t0_; }
    double tf() const { return tf_; }
    Eigen::VectorXd state(double t) const;    // [q; qdot]
    Eigen::VectorXd costate(double t) const;
    double control(double t) const;
    /// Cost integral by composite 8-point Gauss-Legendre.
    double cost() const { return cost_; }
    /// Condition number of the boundary block that determines the initial costate.
    double boundary_condition() const { return condition_; }

    /// Modal configuration/rates at t.
    ModalState modal_state(double t) const;

    /// State, costate and control at many times; evenly spaced runs are
    /// propagated with one cached step exponential, re-anchored periodically.
    LqSeries sample(const std::vector<double>& times) const;

private:
    // Extended precision: the initial costate is large at short horizons and
    // x(t) is recovered from a strongly cancelling sum.
    using WideMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    using WideVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

    WideVector augmented(double t) const;

    WideMatrix hamiltonian_;
    WideVector start_;  // [x0; costate0]
    WideVector input_;  // B
    WideMatrix weight_;
    double rho_ = 1.0;
    double t0_ = 0.0;
    double tf_ = 0.0;
    double cost_ = 0.0;
    double condition_ = 0.0;
};


LqSeries lq_tpbvp_reference(const OcpSpec& spec, const std::vector<double>& times);

/// t_k of every macro node, and the midpoint of every micro interval.
std::vector<double> macro_times(const MultirateGrid& grid);
std::vector<double> micro_midpoints(const MultirateGrid& grid);

/// Single-rate (p = 1) DMOC solve of the same maneuver at dt / refinement.
OcpSolution fine_grid_reference(const OcpSpec& spec, int refinement, const KktOptions& options = {});

struct ErrorGroup {
    std::string name;
    double absolute = 0.0;
    double relative = 0.0;  // NaN when this group's reference is identically zero
};

struct ErrorReport {
    double absolute = 0.0;  // max over nodes of the inf-norm of the difference
    double relative = 0.0;  // absolute / max over nodes of the inf-norm of the reference
    std::vector<ErrorGroup> groups;
    int node_count = 0;

    /// Throws DomainError for an unknown group.
    const ErrorGroup& group(const std::string& name) const;
};

/// Named variable groups sampled on shared nodes: each matrix is variables x nodes.
using GroupedSamples = std::vector<std::pair<std::string, Eigen::MatrixXd>>;

/// Throws DomainError on empty node sets, mismatched groups, or an all-zero reference.
ErrorReport error_metrics(const GroupedSamples& candidate, const GroupedSamples& reference);

/// Macro-node samples of a trajectory: {"slow", "fast"} modal, or {"config"} physical xi.
GroupedSamples modal_samples(const MultirateTrajectory& traj);
GroupedSamples physical_samples(const ModalSystem& msys, const MultirateTrajectory& traj);
/// {"control"} at the micro midpoints.
GroupedSamples control_samples(const MultirateTrajectory& traj);

/// The same groups taken from a continuous reference at the grid's nodes.
GroupedSamples modal_samples(const MultirateGrid& grid, int num_slow,
                             const std::function<ModalState(double)>& reference);
GroupedSamples physical_samples(const ModalSystem& msys, const MultirateGrid& grid,
                                const std::function<ModalState(double)>& reference);
GroupedSamples control_samples(const MultirateGrid& grid, const std::function<double(double)>& reference);

/// Groups from a TPBVP series sampled at macro_times (state) or micro_midpoints (control).
GroupedSamples physical_samples(const ModalSystem& msys, const LqSeries& at_macro_nodes);
GroupedSamples control_samples(const LqSeries& at_midpoints);

}  // namespace mrdmoc
