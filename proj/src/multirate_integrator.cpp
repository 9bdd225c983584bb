#include "mrdmoc/multirate_integrator.hpp"

#include "mrdmoc/errors.hpp"

#include <Eigen/LU>

#include <cmath>
#include <functional>
#include <optional>
#include <string>

namespace mrdmoc {

namespace {

void check_slot_dims(const ModalSystem& msys, const MultirateGrid& grid, const Eigen::VectorXd& slow_k,
                     const Eigen::VectorXd& slow_k1, const Eigen::MatrixXd& fast_k) {
    if (slow_k.size() != msys.num_slow() || slow_k1.size() != msys.num_slow() ||
        fast_k.rows() != msys.num_fast() || fast_k.cols() != grid.micro_count + 1) {
        throw DomainError("multirate_integrator: slot dimensions do not match split r=" +
                          std::to_string(msys.split) + ", p=" + std::to_string(grid.micro_count));
    }
}

double inf_norm(const Eigen::MatrixXd& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

// Residual of one macro step as a function of the unknowns
// u = [q^s_{k+1}; q^{f,1}_k .. q^{f,p}_k].
using StepResidual = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct Unknowns {
    Eigen::VectorXd slow_next;
    Eigen::MatrixXd fast;  // (N+1-r) x (p+1)
};

Unknowns unpack(const ModalSystem& msys, const MultirateGrid& grid, const Eigen::VectorXd& u,
                const Eigen::VectorXd& shared_fast_node) {
    const int r = msys.num_slow();
    const int nf = msys.num_fast();
    const int p = grid.micro_count;
    Unknowns out;
    out.slow_next = u.head(r);
    out.fast.resize(nf, p + 1);
    out.fast.col(0) = shared_fast_node;
    for (int m = 1; m <= p; ++m) out.fast.col(m) = u.segment(r + (m - 1) * nf, nf);
    return out;
}

using JacobianLU = Eigen::PartialPivLU<Eigen::MatrixXd>;

// The Jacobian of the step residual does not depend on the state for a
// quadratic Lagrangian, so simulate() factors it once per residual kind.
struct JacobianCache {
    std::optional<JacobianLU> start;
    std::optional<JacobianLU> regular;
};

// Jacobian assembled by probing the residual's homogeneous part.
JacobianLU factor_jacobian(const StepResidual& homogeneous, Eigen::Index n) {
    Eigen::MatrixXd jac(n, n);
    Eigen::VectorXd unit = Eigen::VectorXd::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        unit(j) = 1.0;
        jac.col(j) = homogeneous(unit);
        unit(j) = 0.0;
    }
    JacobianLU lu(jac);
    if (!(lu.rcond() > 1e-14)) {
        throw NumericError("multirate_integrator: singular Newton Jacobian (rcond=" +
                           std::to_string(lu.rcond()) + ")");
    }
    return lu;
}

StepResult newton_solve(const ModalSystem& msys, const MultirateGrid& grid, const StepResidual& residual,
                        const StepResidual& homogeneous, const Eigen::VectorXd& guess,
                        const Eigen::VectorXd& shared_fast_node, const NewtonOptions& options,
                        std::optional<JacobianLU>* cached) {
    const Eigen::Index n = guess.size();
    std::optional<JacobianLU> local;
    std::optional<JacobianLU>& slot = cached != nullptr ? *cached : local;
    if (!slot) slot.emplace(factor_jacobian(homogeneous, n));
    const JacobianLU& lu = *slot;

    const double rhs = inf_norm(residual(Eigen::VectorXd::Zero(n)));
    const double tol = options.tolerance * (1.0 + rhs);
    Eigen::VectorXd u = guess;
    Eigen::VectorXd res = residual(u);
    int it = 0;
    double res_norm = inf_norm(res);
    while (res_norm > tol && it < options.max_iterations) {
        u -= lu.solve(res);
        res = residual(u);
        res_norm = inf_norm(res);
        ++it;
    }
    if (res_norm > tol) {
        throw NumericError("multirate_integrator: Newton did not converge (residual " +
                           std::to_string(res_norm) + ")");
    }
    Unknowns out = unpack(msys, grid, u, shared_fast_node);
    return {std::move(out.slow_next), std::move(out.fast), it, res_norm};
}

Eigen::VectorXd initial_guess(const ModalSystem& msys, const MultirateGrid& grid,
                              const Eigen::VectorXd& slow_cur, const Eigen::VectorXd& fast_node) {
    const int r = msys.num_slow();
    const int nf = msys.num_fast();
    Eigen::VectorXd u(r + nf * grid.micro_count);
    u.head(r) = slow_cur;
    for (int m = 0; m < grid.micro_count; ++m) u.segment(r + m * nf, nf) = fast_node;
    return u;
}

}  // namespace

MultirateGrid MultirateGrid::from_micro_step(double t0, double tf, double dt, int p) {
    if (p < 1) throw ConfigError("multirate_integrator: micro count p must be >= 1");
    if (!(dt > 0.0)) throw ConfigError("multirate_integrator: micro step must be > 0");
    if (!(tf > t0)) throw ConfigError("multirate_integrator: horizon must satisfy tf > t0");
    const double macro = p * dt;
    const double ratio = (tf - t0) / macro;
    const double n_s = std::round(ratio);
    if (n_s < 1.0 || std::abs(ratio - n_s) > 1e-9 * std::max(1.0, ratio)) {
        throw ConfigError("multirate_integrator: (tf - t0) / (p dt) = " + std::to_string(ratio) +
                          " is not an integer");
    }
    MultirateGrid g;
    g.t0 = t0;
    g.tf = tf;
    g.micro_step = dt;
    g.macro_step = macro;
    g.micro_count = p;
    g.macro_count = static_cast<int>(n_s);
    return g;
}

MultirateTrajectory::MultirateTrajectory(const MultirateGrid& g, int num_slow, int num_fast)
    : grid(g),
      slow(Eigen::MatrixXd::Zero(num_slow, g.macro_count + 1)),
      fast(Eigen::MatrixXd::Zero(num_fast, g.num_micro_nodes())),
      control(Eigen::VectorXd::Zero(g.num_micro_intervals())) {}

Eigen::VectorXd MultirateTrajectory::modal_config(int k) const {
    Eigen::VectorXd q(slow.rows() + fast.rows());
    q << slow.col(k), fast.col(k * grid.micro_count);
    return q;
}

double discrete_lagrangian(const ModalSystem& msys, const MultirateGrid& grid,
                           const Eigen::VectorXd& slow_k, const Eigen::VectorXd& slow_k1,
                           const Eigen::MatrixXd& fast_k) {
    check_slot_dims(msys, grid, slow_k, slow_k1, fast_k);
    const double dt = grid.micro_step;
    const auto lam_s = msys.slow_eigenvalues();
    const auto lam_f = msys.fast_eigenvalues();
    const Eigen::VectorXd v_slow = (slow_k1 - slow_k) / grid.macro_step;

    double sum = 0.0;
    for (int m = 0; m < grid.micro_count; ++m) {
        const double w = grid.slow_midpoint_weight(m);
        const Eigen::VectorXd mid_s = (1.0 - w) * slow_k + w * slow_k1;
        const Eigen::VectorXd v_fast = (fast_k.col(m + 1) - fast_k.col(m)) / dt;
        const Eigen::VectorXd mid_f = 0.5 * (fast_k.col(m) + fast_k.col(m + 1));
        sum += 0.5 * v_slow.squaredNorm() + 0.5 * v_fast.squaredNorm() -
               0.5 * mid_s.dot(lam_s.cwiseProduct(mid_s)) - 0.5 * mid_f.dot(lam_f.cwiseProduct(mid_f));
    }
    return dt * sum;
}

SlotDerivatives slot_derivatives(const ModalSystem& msys, const MultirateGrid& grid,
                                 const Eigen::VectorXd& slow_k, const Eigen::VectorXd& slow_k1,
                                 const Eigen::MatrixXd& fast_k) {
    check_slot_dims(msys, grid, slow_k, slow_k1, fast_k);
    const double dt = grid.micro_step;
    const int p = grid.micro_count;
    const auto lam_s = msys.slow_eigenvalues();
    const auto lam_f = msys.fast_eigenvalues();

    SlotDerivatives d;
    // Kinetic part: d/da [dT/2 |(b-a)/dT|^2] = -(b-a)/dT.
    const Eigen::VectorXd v_slow = (slow_k1 - slow_k) / grid.macro_step;
    d.slow_left = -v_slow;
    d.slow_right = v_slow;
    for (int m = 0; m < p; ++m) {
        const double w = grid.slow_midpoint_weight(m);
        const Eigen::VectorXd force = dt * lam_s.cwiseProduct((1.0 - w) * slow_k + w * slow_k1);
        d.slow_left -= (1.0 - w) * force;
        d.slow_right -= w * force;
    }

    d.fast = Eigen::MatrixXd::Zero(msys.num_fast(), p + 1);
    for (int m = 0; m < p; ++m) {
        const Eigen::VectorXd v = (fast_k.col(m + 1) - fast_k.col(m)) / dt;
        const Eigen::VectorXd pot = 0.5 * dt * lam_f.cwiseProduct(0.5 * (fast_k.col(m) + fast_k.col(m + 1)));
        d.fast.col(m) += -v - pot;
        d.fast.col(m + 1) += v - pot;
    }
    return d;
}

DiscreteForces discrete_forces(const ModalSystem& msys, const MultirateGrid& grid,
                               const Eigen::VectorXd& tau_k) {
    const int p = grid.micro_count;
    if (tau_k.size() != p) {
        throw DomainError("multirate_integrator: control block has " + std::to_string(tau_k.size()) +
                          " entries, expected p=" + std::to_string(p));
    }
    const double half = 0.5 * grid.micro_step;
    DiscreteForces f;
    f.slow_left = msys.slow_input() * (half * tau_k.sum());
    f.slow_right = f.slow_left;
    f.fast_left = msys.fast_input() * (half * tau_k.transpose());
    f.fast_right = f.fast_left;
    return f;
}

StepMomenta step_momenta(const ModalSystem& msys, const MultirateGrid& grid,
                         const Eigen::VectorXd& slow_k, const Eigen::VectorXd& slow_k1,
                         const Eigen::MatrixXd& fast_k, const Eigen::VectorXd& tau_k) {
    const SlotDerivatives d = slot_derivatives(msys, grid, slow_k, slow_k1, fast_k);
    const DiscreteForces f = discrete_forces(msys, grid, tau_k);
    const double dt = grid.micro_step;
    const int p = grid.micro_count;
    const auto lam_f = msys.fast_eigenvalues();

    StepMomenta out;
    out.slow_left = -d.slow_left - f.slow_left;
    out.slow_right = d.slow_right + f.slow_right;
    // Per micro interval: the fast part of L_d separates by interval, so the
    // left/right transforms of interval m use only its own contribution.
    out.fast_left.resize(msys.num_fast(), p);
    out.fast_right.resize(msys.num_fast(), p);
    for (int m = 0; m < p; ++m) {
        const Eigen::VectorXd v = (fast_k.col(m + 1) - fast_k.col(m)) / dt;
        const Eigen::VectorXd pot = 0.5 * dt * lam_f.cwiseProduct(0.5 * (fast_k.col(m) + fast_k.col(m + 1)));
        out.fast_left.col(m) = v + pot - f.fast_left.col(m);
        out.fast_right.col(m) = v - pot + f.fast_right.col(m);
    }
    return out;
}

namespace {

StepResult step_impl(const ModalSystem& msys, const MultirateGrid& grid, const Eigen::VectorXd& slow_prev,
                     const Eigen::VectorXd& slow_cur, const Eigen::MatrixXd& fast_prev,
                     const Eigen::VectorXd& tau_prev, const Eigen::VectorXd& tau_cur,
                     const NewtonOptions& options, JacobianCache* cache) {
    const int r = msys.num_slow();
    const int nf = msys.num_fast();
    const int p = grid.micro_count;
    const Eigen::VectorXd shared = fast_prev.col(p);

    const SlotDerivatives d_prev = slot_derivatives(msys, grid, slow_prev, slow_cur, fast_prev);
    const DiscreteForces f_prev = discrete_forces(msys, grid, tau_prev);
    const DiscreteForces f_cur = discrete_forces(msys, grid, tau_cur);

    auto rows = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& s_cur, const Eigen::VectorXd& node,
                    bool with_known) {
        const Unknowns x = unpack(msys, grid, u, node);
        const SlotDerivatives d = slot_derivatives(msys, grid, s_cur, x.slow_next, x.fast);
        Eigen::VectorXd res(r + nf * p);
        res.head(r) = d.slow_left;
        res.segment(r, nf) = d.fast.col(0);
        for (int m = 1; m < p; ++m) res.segment(r + m * nf, nf) = d.fast.col(m);
        if (with_known) {
            res.head(r) += d_prev.slow_right + f_cur.slow_left + f_prev.slow_right;
            res.segment(r, nf) += d_prev.fast.col(p) + f_cur.fast_left.col(0) + f_prev.fast_right.col(p - 1);
            for (int m = 1; m < p; ++m) {
                res.segment(r + m * nf, nf) += f_cur.fast_left.col(m) + f_cur.fast_right.col(m - 1);
            }
        }
        return res;
    };
    const Eigen::VectorXd zero_s = Eigen::VectorXd::Zero(r);
    const Eigen::VectorXd zero_f = Eigen::VectorXd::Zero(nf);
    const StepResidual residual = [&](const Eigen::VectorXd& u) { return rows(u, slow_cur, shared, true); };
    const StepResidual homogeneous = [&](const Eigen::VectorXd& u) { return rows(u, zero_s, zero_f, false); };
    return newton_solve(msys, grid, residual, homogeneous, initial_guess(msys, grid, slow_cur, shared),
                        shared, options, cache != nullptr ? &cache->regular : nullptr);
}

StepResult start_impl(const ModalSystem& msys, const MultirateGrid& grid, const ModalState& initial,
                      const Eigen::VectorXd& tau_first, const NewtonOptions& options, JacobianCache* cache) {
    const int r = msys.num_slow();
    const int nf = msys.num_fast();
    const int p = grid.micro_count;
    if (initial.q.size() != msys.size() || initial.qdot.size() != msys.size()) {
        throw DomainError("multirate_integrator: initial state dimension mismatch");
    }
    const Eigen::VectorXd s0 = initial.q.head(r);
    const Eigen::VectorXd f0 = initial.q.tail(nf);
    // Modal mass is the identity, so conjugate momenta equal modal rates.
    const Eigen::VectorXd ps0 = initial.qdot.head(r);
    const Eigen::VectorXd pf0 = initial.qdot.tail(nf);
    const DiscreteForces f_cur = discrete_forces(msys, grid, tau_first);

    // p^{s-}_0 = -D_{q^s_0} L_0 - f^{s-}_0 and p^{f,0-}_0 likewise, then the
    // interior fast equations of macro step 0.
    auto rows = [&](const Eigen::VectorXd& u, const Eigen::VectorXd& s_cur, const Eigen::VectorXd& node,
                    bool with_known) {
        const Unknowns x = unpack(msys, grid, u, node);
        const SlotDerivatives d = slot_derivatives(msys, grid, s_cur, x.slow_next, x.fast);
        Eigen::VectorXd res(r + nf * p);
        res.head(r) = -d.slow_left;
        res.segment(r, nf) = -d.fast.col(0);
        for (int m = 1; m < p; ++m) res.segment(r + m * nf, nf) = d.fast.col(m);
        if (with_known) {
            res.head(r) -= f_cur.slow_left + ps0;
            res.segment(r, nf) -= f_cur.fast_left.col(0) + pf0;
            for (int m = 1; m < p; ++m) {
                res.segment(r + m * nf, nf) += f_cur.fast_left.col(m) + f_cur.fast_right.col(m - 1);
            }
        }
        return res;
    };
    const Eigen::VectorXd zero_s = Eigen::VectorXd::Zero(r);
    const Eigen::VectorXd zero_f = Eigen::VectorXd::Zero(nf);
    const StepResidual residual = [&](const Eigen::VectorXd& u) { return rows(u, s0, f0, true); };
    const StepResidual homogeneous = [&](const Eigen::VectorXd& u) { return rows(u, zero_s, zero_f, false); };
    return newton_solve(msys, grid, residual, homogeneous, initial_guess(msys, grid, s0, f0), f0, options,
                        cache != nullptr ? &cache->start : nullptr);
}

}  // namespace

StepResult step(const ModalSystem& msys, const MultirateGrid& grid, const Eigen::VectorXd& slow_prev,
                const Eigen::VectorXd& slow_cur, const Eigen::MatrixXd& fast_prev,
                const Eigen::VectorXd& tau_prev, const Eigen::VectorXd& tau_cur,
                const NewtonOptions& options) {
    return step_impl(msys, grid, slow_prev, slow_cur, fast_prev, tau_prev, tau_cur, options, nullptr);
}

StepResult start_step(const ModalSystem& msys, const MultirateGrid& grid, const ModalState& initial,
                      const Eigen::VectorXd& tau_first, const NewtonOptions& options) {
    return start_impl(msys, grid, initial, tau_first, options, nullptr);
}

MultirateTrajectory simulate(const ModalSystem& msys, const MultirateGrid& grid, const ModalState& initial,
                             const Eigen::VectorXd& controls, const NewtonOptions& options) {
    if (controls.size() != grid.num_micro_intervals()) {
        throw DomainError("multirate_integrator: control sequence has " + std::to_string(controls.size()) +
                          " entries, expected n_s*p=" + std::to_string(grid.num_micro_intervals()));
    }
    const int p = grid.micro_count;
    MultirateTrajectory traj(grid, msys.num_slow(), msys.num_fast());
    traj.control = controls;
    traj.slow.col(0) = initial.q.head(msys.num_slow());

    JacobianCache cache;
    StepResult first = start_impl(msys, grid, initial, traj.control_block(0), options, &cache);
    traj.slow.col(1) = first.slow_next;
    traj.fast_block(0) = first.fast;

    for (int k = 1; k < grid.macro_count; ++k) {
        const Eigen::MatrixXd fast_prev = traj.fast_block(k - 1);
        StepResult next = step_impl(msys, grid, traj.slow.col(k - 1), traj.slow.col(k), fast_prev,
                                    traj.control_block(k - 1), traj.control_block(k), options, &cache);
        traj.slow.col(k + 1) = next.slow_next;
        traj.fast.middleCols(k * p + 1, p) = next.fast.rightCols(p);
    }
    return traj;
}

Eigen::VectorXd node_momentum(const ModalSystem& msys, const MultirateTrajectory& traj, int k) {
    const int n_s = traj.grid.macro_count;
    if (k < 0 || k > n_s) throw DomainError("multirate_integrator: macro node index out of range");
    Eigen::VectorXd mom(msys.size());
    if (k == 0) {
        const StepMomenta mm = step_momenta(msys, traj.grid, traj.slow.col(0), traj.slow.col(1),
                                            traj.fast_block(0), traj.control_block(0));
        mom << mm.slow_left, mm.fast_left.col(0);
    } else {
        const StepMomenta mm = step_momenta(msys, traj.grid, traj.slow.col(k - 1), traj.slow.col(k),
                                            traj.fast_block(k - 1), traj.control_block(k - 1));
        mom << mm.slow_right, mm.fast_right.col(traj.grid.micro_count - 1);
    }
    return mom;
}

Diagnostics diagnostics(const ModalSystem& msys, const MultirateTrajectory& traj) {
    const int n_s = traj.grid.macro_count;
    // p_theta = first row of M E applied to modal momenta.
    const Eigen::RowVectorXd theta_row = msys.mass.row(0) * msys.modal_matrix;
    Diagnostics out;
    out.time.reserve(n_s + 1);
    double p_theta0 = 0.0;
    double impulse = 0.0;
    for (int k = 0; k <= n_s; ++k) {
        const Eigen::VectorXd q = traj.modal_config(k);
        const Eigen::VectorXd mom = node_momentum(msys, traj, k);
        const double p_theta = theta_row.dot(mom);
        if (k == 0) p_theta0 = p_theta;
        if (k > 0) impulse += traj.grid.micro_step * traj.control_block(k - 1).sum();
        out.time.push_back(traj.grid.macro_time(k));
        out.energy.push_back(0.5 * mom.squaredNorm() + 0.5 * q.dot(msys.eigenvalues.cwiseProduct(q)));
        out.p_theta.push_back(p_theta);
        out.noether.push_back(p_theta - p_theta0 - impulse);
    }
    const MultirateGrid& g = traj.grid;
    const Eigen::VectorXd lam_s = msys.slow_eigenvalues();
    const Eigen::VectorXd lam_f = msys.fast_eigenvalues();
    auto interval = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& lam, double h) {
        const Eigen::VectorXd v = (b - a) / h;
        const Eigen::VectorXd mid = 0.5 * (a + b);
        return 0.5 * v.squaredNorm() + 0.5 * mid.dot(lam.cwiseProduct(mid));
    };
    for (int k = 0; k < n_s; ++k) {
        double fast = 0.0;
        for (int m = 0; m < g.micro_count; ++m) {
            const int j = k * g.micro_count + m;
            fast += interval(traj.fast.col(j), traj.fast.col(j + 1), lam_f, g.micro_step);
        }
        out.interval_time.push_back(g.macro_time(k) + 0.5 * g.macro_step);
        out.interval_energy.push_back(interval(traj.slow.col(k), traj.slow.col(k + 1), lam_s, g.macro_step) +
                                      fast / g.micro_count);
    }
    return out;
}

double momentum_mismatch(const ModalSystem& msys, const MultirateTrajectory& traj) {
    const int n_s = traj.grid.macro_count;
    const int p = traj.grid.micro_count;
    double worst = 0.0;
    double scale = 0.0;
    StepMomenta prev;
    for (int k = 0; k < n_s; ++k) {
        StepMomenta cur = step_momenta(msys, traj.grid, traj.slow.col(k), traj.slow.col(k + 1),
                                       traj.fast_block(k), traj.control_block(k));
        scale = std::max({scale, inf_norm(cur.slow_left), inf_norm(cur.slow_right), inf_norm(cur.fast_left),
                          inf_norm(cur.fast_right)});
        if (k > 0) {
            worst = std::max(worst, inf_norm(prev.slow_right - cur.slow_left));
            worst = std::max(worst, inf_norm(prev.fast_right.col(p - 1) - cur.fast_left.col(0)));
        }
        for (int m = 1; m < p; ++m) {
            worst = std::max(worst, inf_norm(cur.fast_right.col(m - 1) - cur.fast_left.col(m)));
        }
        prev = std::move(cur);
    }
    return worst / (1.0 + scale);
}

double euler_lagrange_residual(const ModalSystem& msys, const MultirateTrajectory& traj) {
    const int n_s = traj.grid.macro_count;
    const int p = traj.grid.micro_count;
    double worst = 0.0;
    SlotDerivatives d_prev;
    DiscreteForces f_prev;
    for (int k = 0; k < n_s; ++k) {
        const SlotDerivatives d = slot_derivatives(msys, traj.grid, traj.slow.col(k), traj.slow.col(k + 1),
                                                   traj.fast_block(k));
        const DiscreteForces f = discrete_forces(msys, traj.grid, traj.control_block(k));
        if (k > 0) {
            const Eigen::VectorXd ra = d_prev.slow_right + d.slow_left + f.slow_left + f_prev.slow_right;
            const double sa = 1.0 + std::max({inf_norm(d_prev.slow_right), inf_norm(d.slow_left),
                                              inf_norm(f.slow_left), inf_norm(f_prev.slow_right)});
            worst = std::max(worst, inf_norm(ra) / sa);
            const Eigen::VectorXd rb = d_prev.fast.col(p) + d.fast.col(0) + f.fast_left.col(0) +
                                       f_prev.fast_right.col(p - 1);
            const double sb = 1.0 + std::max({inf_norm(d_prev.fast.col(p)), inf_norm(d.fast.col(0)),
                                              inf_norm(f.fast_left.col(0)), inf_norm(f_prev.fast_right.col(p - 1))});
            worst = std::max(worst, inf_norm(rb) / sb);
        }
        for (int m = 1; m < p; ++m) {
            const Eigen::VectorXd rc = d.fast.col(m) + f.fast_left.col(m) + f.fast_right.col(m - 1);
            const double sc = 1.0 + std::max({inf_norm(d.fast.col(m)), inf_norm(f.fast_left.col(m)),
                                              inf_norm(f.fast_right.col(m - 1))});
            worst = std::max(worst, inf_norm(rc) / sc);
        }
        d_prev = d;
        f_prev = f;
    }
    return worst;
}

}  // namespace mrdmoc
