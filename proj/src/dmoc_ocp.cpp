#include "mrdmoc/dmoc_ocp.hpp"

#include "mrdmoc/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

namespace mrdmoc {

namespace {

// Local slot vector of one macro step: [q^s_k, q^s_{k+1}, fast block (column-major), tau_k].
struct LocalSlots {
    Eigen::VectorXd slow_k;
    Eigen::VectorXd slow_k1;
    Eigen::MatrixXd fast;
    Eigen::VectorXd tau;
};

int local_size(int r, int nf, int p) { return 2 * r + nf * (p + 1) + p; }

LocalSlots split_local(const Eigen::VectorXd& v, int r, int nf, int p) {
    LocalSlots s;
    s.slow_k = v.head(r);
    s.slow_k1 = v.segment(r, r);
    s.fast = Eigen::Map<const Eigen::MatrixXd>(v.data() + 2 * r, nf, p + 1);
    s.tau = v.tail(p);
    return s;
}

Eigen::VectorXd stack_momenta(const StepMomenta& mm) {
    const Eigen::Index nfp = mm.fast_left.size();
    Eigen::VectorXd out(mm.slow_left.size() + mm.slow_right.size() + 2 * nfp);
    out << mm.slow_left, mm.slow_right, Eigen::Map<const Eigen::VectorXd>(mm.fast_left.data(), nfp),
        Eigen::Map<const Eigen::VectorXd>(mm.fast_right.data(), nfp);
    return out;
}

// Jacobian of the stacked Legendre transforms of one macro step with respect
// to the local slots. The transforms are linear and vanish at zero.
Eigen::MatrixXd legendre_jacobian(const ModalSystem& msys, const MultirateGrid& grid) {
    const int r = msys.num_slow();
    const int nf = msys.num_fast();
    const int p = grid.micro_count;
    const int n = local_size(r, nf, p);
    Eigen::MatrixXd jac(2 * r + 2 * nf * p, n);
    Eigen::VectorXd unit = Eigen::VectorXd::Zero(n);
    for (int c = 0; c < n; ++c) {
        unit(c) = 1.0;
        const LocalSlots s = split_local(unit, r, nf, p);
        jac.col(c) = stack_momenta(step_momenta(msys, grid, s.slow_k, s.slow_k1, s.fast, s.tau));
        unit(c) = 0.0;
    }
    return jac;
}

// Hessian of the (homogeneous quadratic) macro-step cost from polarization.
Eigen::MatrixXd cost_hessian(const ModalSystem& msys, const MultirateGrid& grid, const CostWeights& w) {
    const int r = msys.num_slow();
    const int nf = msys.num_fast();
    const int p = grid.micro_count;
    const int n = local_size(r, nf, p);
    auto cost = [&](const Eigen::VectorXd& v) {
        const LocalSlots s = split_local(v, r, nf, p);
        return discrete_cost(msys, grid, s.slow_k, s.slow_k1, s.fast, s.tau, w);
    };
    Eigen::VectorXd diag(n);
    Eigen::VectorXd probe = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        probe(i) = 1.0;
        diag(i) = cost(probe);
        probe(i) = 0.0;
    }
    Eigen::MatrixXd hess(n, n);
    for (int i = 0; i < n; ++i) {
        hess(i, i) = 2.0 * diag(i);
        for (int j = i + 1; j < n; ++j) {
            probe(i) = 1.0;
            probe(j) = 1.0;
            double h = cost(probe) - diag(i) - diag(j);
            probe(i) = 0.0;
            probe(j) = 0.0;
            // |h_ij| <= sqrt(h_ii h_jj) for a PSD form; anything far below is cancellation noise
            if (std::abs(h) <= 1e-13 * std::sqrt(4.0 * std::abs(diag(i) * diag(j)))) h = 0.0;
            hess(i, j) = h;
            hess(j, i) = h;
        }
    }
    return hess;
}

long checked_ratio(double num, double den, const char* what) {
    const double q = num / den;
    const long n = std::lround(q);
    if (n < 1 || std::abs(q - static_cast<double>(n)) > 1e-9 * std::max(1.0, std::abs(q))) {
        throw ConfigError(std::string("dmoc_ocp: ") + what + " is not an integer (" + std::to_string(q) + ")");
    }
    return n;
}

}  // namespace

double discrete_cost(const ModalSystem& msys, const MultirateGrid& grid, const Eigen::VectorXd& slow_k,
                     const Eigen::VectorXd& slow_k1, const Eigen::MatrixXd& fast_k, const Eigen::VectorXd& tau_k,
                     const CostWeights& weights) {
    const int r = msys.num_slow();
    const int nf = msys.num_fast();
    const int n = msys.size();
    const int p = grid.micro_count;
    if (slow_k.size() != r || slow_k1.size() != r || fast_k.rows() != nf || fast_k.cols() != p + 1 ||
        tau_k.size() != p) {
        throw DomainError("dmoc_ocp: cost slot dimensions do not match the split");
    }
    if (weights.state.rows() != 2 * n || weights.state.cols() != 2 * n) {
        throw DomainError("dmoc_ocp: state weight must be " + std::to_string(2 * n) + " square");
    }
    const double dt = grid.micro_step;
    const Eigen::VectorXd vs = (slow_k1 - slow_k) / grid.macro_step;
    Eigen::VectorXd x(2 * n);
    double total = 0.0;
    for (int m = 0; m < p; ++m) {
        const double w = grid.slow_midpoint_weight(m);
        x.head(r) = (1.0 - w) * slow_k + w * slow_k1;
        x.segment(r, nf) = 0.5 * (fast_k.col(m) + fast_k.col(m + 1));
        x.segment(n, r) = vs;
        x.tail(nf) = (fast_k.col(m + 1) - fast_k.col(m)) / dt;
        total += dt * (0.5 * x.dot(weights.state * x) + 0.5 * weights.control * tau_k(m) * tau_k(m));
    }
    return total;
}

OcpSpec OcpSpec::rest_to_rest(const ModalSystem& msys, const MultirateGrid& grid, double theta_deg) {
    OcpSpec spec;
    spec.msys = msys;
    spec.grid = grid;
    spec.xi_start = Eigen::VectorXd::Zero(msys.size());
    spec.xi_end = Eigen::VectorXd::Zero(msys.size());
    spec.xi_end(0) = theta_deg * std::numbers::pi / 180.0;
    return spec;
}

void OcpSpec::validate() const {
    const int n = msys.size();
    auto check_vec = [&](const Eigen::VectorXd& v, const char* name, bool optional) {
        if (optional && v.size() == 0) return;
        if (v.size() != n) {
            throw ConfigError(std::string("dmoc_ocp: ") + name + " has dimension " + std::to_string(v.size()) +
                              ", expected " + std::to_string(n));
        }
        if (!v.allFinite()) throw ConfigError(std::string("dmoc_ocp: ") + name + " is not finite");
    };
    check_vec(xi_start, "xi_start", false);
    check_vec(xi_end, "xi_end", false);
    check_vec(xi_dot_start, "xi_dot_start", true);
    check_vec(xi_dot_end, "xi_dot_end", true);
    if (grid.macro_count < 1 || grid.micro_count < 1 || !(grid.micro_step > 0.0)) {
        throw ConfigError("dmoc_ocp: grid needs at least one macro step");
    }
    if (!(control_weight > 0.0)) throw ConfigError("dmoc_ocp: control weight must be positive");
    if (state_weight.size() != 0) {
        if (state_weight.rows() != 2 * n || state_weight.cols() != 2 * n) {
            throw ConfigError("dmoc_ocp: state weight must be " + std::to_string(2 * n) + " square");
        }
        const double scale = std::max(1.0, state_weight.cwiseAbs().maxCoeff());
        if ((state_weight - state_weight.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
            throw ConfigError("dmoc_ocp: state weight is not symmetric");
        }
        const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(state_weight).eigenvalues();
        if (ev.minCoeff() < -1e-12 * scale) throw ConfigError("dmoc_ocp: state weight is not positive semidefinite");
    }
}

CostWeights OcpSpec::weights() const {
    CostWeights w;
    w.state = state_weight.size() ? state_weight : Eigen::MatrixXd::Identity(2 * msys.size(), 2 * msys.size());
    w.control = control_weight;
    return w;
}

VariableLayout::VariableLayout(int num_slow, int num_fast, int macro_count, int micro_count)
    : r_(num_slow), nf_(num_fast), ns_(macro_count), p_(micro_count) {
    if (r_ < 1 || nf_ < 0 || ns_ < 1 || p_ < 1) throw DomainError("dmoc_ocp: invalid layout dimensions");
    block_ = 2L * r_ + 2L * nf_ * p_ + p_;
}

long VariableLayout::formula_slow_var(int p, int r, int, double tf, double dt) {
    return 2L * r * (checked_ratio(tf, p * dt, "tf/(p dt)") + 1);
}

long VariableLayout::formula_fast_var(int r, int num_modes, double tf, double dt) {
    const long n = checked_ratio(tf, dt, "tf/dt");
    return 2L * (num_modes + 1 - r) * (n + 1) + n;
}

long VariableLayout::formula_eq_con(int p, int r, int num_modes, double tf, double dt) {
    const long ns = checked_ratio(tf, p * dt, "tf/(p dt)");
    const long n = checked_ratio(tf, dt, "tf/dt");
    return 2L * r * (ns + 2) + 2L * (num_modes + 1 - r) * (n + 2);
}

AssembledOcp assemble(const OcpSpec& spec) {
    spec.validate();
    const ModalSystem& msys = spec.msys;
    const MultirateGrid& grid = spec.grid;
    const int r = msys.num_slow();
    const int nf = msys.num_fast();
    const int ns = grid.macro_count;
    const int p = grid.micro_count;
    const int nl = local_size(r, nf, p);

    AssembledOcp out;
    out.layout = VariableLayout(r, nf, ns, p);
    const VariableLayout& lay = out.layout;
    const Eigen::Index nvar = lay.n_total_var();
    const Eigen::Index ncon = lay.n_eq_con();

    // Legendre rows are multiplied by dt so that they read as increments of
    // configuration; the feasible set is unchanged.
    const Eigen::MatrixXd leg = grid.micro_step * legendre_jacobian(msys, grid);
    const Eigen::MatrixXd hc = cost_hessian(msys, grid, spec.weights());

    std::vector<Eigen::Index> local_to_global(nl);
    std::vector<Eigen::Index> momentum_slot(leg.rows());
    std::vector<Eigen::Triplet<double>> h_trip;
    std::vector<Eigen::Triplet<double>> a_trip;
    h_trip.reserve(static_cast<std::size_t>(ns) * nl * nl);
    a_trip.reserve(static_cast<std::size_t>(ns) * leg.rows() * (nl + 1) + 4 * msys.size());

    Eigen::VectorXd b = Eigen::VectorXd::Zero(ncon);
    const ModalState start = to_modal(msys, spec.xi_start,
                                      spec.xi_dot_start.size() ? spec.xi_dot_start : Eigen::VectorXd::Zero(msys.size()));
    const ModalState end = to_modal(msys, spec.xi_end,
                                    spec.xi_dot_end.size() ? spec.xi_dot_end : Eigen::VectorXd::Zero(msys.size()));

    Eigen::Index row = 0;
    auto boundary_rows = [&](int k, int j, const ModalState& state) {
        for (int i = 0; i < r; ++i) {
            a_trip.emplace_back(row, lay.slow_q(k, i), 1.0);
            b(row++) = state.q(i);
        }
        for (int i = 0; i < nf; ++i) {
            a_trip.emplace_back(row, lay.fast_q(j, i), 1.0);
            b(row++) = state.q(r + i);
        }
        for (int i = 0; i < r; ++i) {
            a_trip.emplace_back(row, lay.slow_p(k, i), 1.0);
            b(row++) = state.qdot(i);
        }
        for (int i = 0; i < nf; ++i) {
            a_trip.emplace_back(row, lay.fast_p(j, i), 1.0);
            b(row++) = state.qdot(r + i);
        }
    };

    boundary_rows(0, 0, start);
    for (int k = 0; k < ns; ++k) {
        int c = 0;
        for (int i = 0; i < r; ++i) local_to_global[c++] = lay.slow_q(k, i);
        for (int i = 0; i < r; ++i) local_to_global[c++] = lay.slow_q(k + 1, i);
        for (int m = 0; m <= p; ++m)
            for (int i = 0; i < nf; ++i) local_to_global[c++] = lay.fast_q(k * p + m, i);
        for (int m = 0; m < p; ++m) local_to_global[c++] = lay.tau(k * p + m);

        int e = 0;
        for (int i = 0; i < r; ++i) momentum_slot[e++] = lay.slow_p(k, i);
        for (int i = 0; i < r; ++i) momentum_slot[e++] = lay.slow_p(k + 1, i);
        for (int m = 0; m < p; ++m)
            for (int i = 0; i < nf; ++i) momentum_slot[e++] = lay.fast_p(k * p + m, i);
        for (int m = 0; m < p; ++m)
            for (int i = 0; i < nf; ++i) momentum_slot[e++] = lay.fast_p(k * p + m + 1, i);

        for (Eigen::Index i = 0; i < leg.rows(); ++i) {
            for (int cc = 0; cc < nl; ++cc) {
                if (leg(i, cc) != 0.0) a_trip.emplace_back(row, local_to_global[cc], leg(i, cc));
            }
            a_trip.emplace_back(row, momentum_slot[i], -grid.micro_step);
            ++row;
        }
        for (int i = 0; i < nl; ++i) {
            for (int j = 0; j < nl; ++j) {
                if (hc(i, j) != 0.0) h_trip.emplace_back(local_to_global[i], local_to_global[j], hc(i, j));
            }
        }
    }
    boundary_rows(ns, ns * p, end);
    if (row != ncon) throw NumericError("dmoc_ocp: internal row count mismatch");

    out.qp.hessian.resize(nvar, nvar);
    out.qp.hessian.setFromTriplets(h_trip.begin(), h_trip.end());
    out.qp.constraints.resize(ncon, nvar);
    out.qp.constraints.setFromTriplets(a_trip.begin(), a_trip.end());
    out.qp.rhs = std::move(b);
    out.qp.linear = Eigen::VectorXd::Zero(nvar);
    return out;
}

double trajectory_cost(const ModalSystem& msys, const MultirateTrajectory& traj, const CostWeights& weights) {
    double total = 0.0;
    for (int k = 0; k < traj.grid.macro_count; ++k) {
        total += discrete_cost(msys, traj.grid, traj.slow.col(k), traj.slow.col(k + 1), traj.fast_block(k),
                               traj.control_block(k), weights);
    }
    return total;
}

OcpSolution extract_solution(const OcpSpec& spec, const AssembledOcp& problem, const KktResult& kkt) {
    const VariableLayout& lay = problem.layout;
    const int r = lay.num_slow();
    const int nf = lay.num_fast();
    const int ns = lay.macro_count();
    const int p = lay.micro_count();
    const Eigen::VectorXd& z = kkt.primal;

    OcpSolution sol;
    sol.layout = lay;
    sol.trajectory = MultirateTrajectory(spec.grid, r, nf);
    sol.slow_momentum.resize(r, ns + 1);
    sol.fast_momentum.resize(nf, static_cast<Eigen::Index>(ns) * p + 1);
    for (int k = 0; k <= ns; ++k) {
        for (int i = 0; i < r; ++i) {
            sol.trajectory.slow(i, k) = z(lay.slow_q(k, i));
            sol.slow_momentum(i, k) = z(lay.slow_p(k, i));
        }
    }
    for (int j = 0; j <= ns * p; ++j) {
        for (int i = 0; i < nf; ++i) {
            sol.trajectory.fast(i, j) = z(lay.fast_q(j, i));
            sol.fast_momentum(i, j) = z(lay.fast_p(j, i));
        }
    }
    for (int j = 0; j < ns * p; ++j) sol.trajectory.control(j) = z(lay.tau(j));

    sol.multipliers = kkt.multipliers;
    sol.cost = trajectory_cost(spec.msys, sol.trajectory, spec.weights());
    sol.primal_residual = kkt.primal_residual;
    sol.stationarity_residual = kkt.stationarity_residual;
    sol.stationarity_normwise = kkt.stationarity_normwise;
    sol.regularization = kkt.regularization;
    sol.refinement_passes = kkt.refinement_passes;
    sol.extended_precision = kkt.extended_precision;
    sol.converged = kkt.converged;
    if (!kkt.converged) sol.warnings.emplace_back("KKT residual targets not met after refinement");
    return sol;
}

OcpSolution solve_maneuver(const OcpSpec& spec, const KktOptions& options) {
    const AssembledOcp problem = assemble(spec);
    auto attempt = [&](const KktOptions& opts) {
        OcpSolution sol = extract_solution(spec, problem, solve_kkt(problem.qp, opts));
        sol.integrator_residual = euler_lagrange_residual(spec.msys, sol.trajectory);
        return sol;
    };
    OcpSolution sol = attempt(options);
    // The stepper residual divides constraint rows by dt, so it can fail where the KKT check passed.
    if (!(sol.integrator_residual <= options.tolerance) && options.precision == KktPrecision::Auto &&
        !sol.extended_precision) {
        KktOptions wide = options;
        wide.precision = KktPrecision::Extended;
        OcpSolution retry = attempt(wide);
        if (retry.integrator_residual < sol.integrator_residual) sol = std::move(retry);
    }
    if (!(sol.integrator_residual <= options.tolerance)) {
        sol.converged = false;
        char buf[96];
        std::snprintf(buf, sizeof buf, "trajectory violates the discrete Euler-Lagrange equations (residual %.3g)",
                      sol.integrator_residual);
        sol.warnings.emplace_back(buf);
    }
    return sol;
}

}  // namespace mrdmoc
