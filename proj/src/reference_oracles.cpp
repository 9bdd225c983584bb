#include "mrdmoc/reference_oracles.hpp"

#include "mrdmoc/beam_model.hpp"
#include "mrdmoc/errors.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace mrdmoc {

ModalState free_response(const ModalSystem& msys, const ModalState& initial, double t) {
    const int n = msys.size();
    if (initial.q.size() != n || initial.qdot.size() != n) {
        throw DomainError("reference_oracles: initial state dimension does not match the modal system");
    }
    if (t < 0.0) throw DomainError("reference_oracles: free response needs t >= 0");
    ModalState out{Eigen::VectorXd(n), Eigen::VectorXd(n)};
    for (int j = 0; j < n; ++j) {
        const double lam = msys.eigenvalues(j);
        const double q0 = initial.q(j);
        const double v0 = initial.qdot(j);
        if (lam > 0.0) {
            const double w = std::sqrt(lam);
            const double c = std::cos(w * t);
            const double s = std::sin(w * t);
            out.q(j) = q0 * c + v0 * s / w;
            out.qdot(j) = -q0 * w * s + v0 * c;
        } else {
            out.q(j) = q0 + v0 * t;
            out.qdot(j) = v0;
        }
    }
    return out;
}

double modal_energy(const ModalSystem& msys, const ModalState& state) {
    return 0.5 * state.qdot.squaredNorm() + 0.5 * state.q.dot(msys.eigenvalues.cwiseProduct(state.q));
}

Rk4Run rk4_simulate(const ModalSystem& msys, const ModalState& initial, double dt, int steps,
                    const Eigen::VectorXd& controls) {
    const int n = msys.size();
    if (initial.q.size() != n || initial.qdot.size() != n) {
        throw DomainError("reference_oracles: initial state dimension does not match the modal system");
    }
    if (!(dt > 0.0) || steps < 0) throw DomainError("reference_oracles: RK4 needs dt > 0 and steps >= 0");
    if (controls.size() != 0 && controls.size() != steps) {
        throw DomainError("reference_oracles: RK4 controls must have one entry per step");
    }
    const Eigen::ArrayXd lam = msys.eigenvalues.array();
    const Eigen::ArrayXd z = msys.input.array();
    Rk4Run run{Eigen::MatrixXd(n, steps + 1), Eigen::MatrixXd(n, steps + 1)};
    Eigen::ArrayXd q = initial.q.array();
    Eigen::ArrayXd v = initial.qdot.array();
    run.q.col(0) = q.matrix();
    run.qdot.col(0) = v.matrix();
    for (int k = 0; k < steps; ++k) {
        const double tau = controls.size() ? controls(k) : 0.0;
        auto acc = [&](const Eigen::ArrayXd& x) -> Eigen::ArrayXd { return -lam * x + z * tau; };
        const Eigen::ArrayXd k1q = v, k1v = acc(q);
        const Eigen::ArrayXd k2q = v + 0.5 * dt * k1v, k2v = acc(q + 0.5 * dt * k1q);
        const Eigen::ArrayXd k3q = v + 0.5 * dt * k2v, k3v = acc(q + 0.5 * dt * k2q);
        const Eigen::ArrayXd k4q = v + dt * k3v, k4v = acc(q + dt * k3q);
        q += dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        run.q.col(k + 1) = q.matrix();
        run.qdot.col(k + 1) = v.matrix();
    }
    return run;
}

namespace {

constexpr int anchor_interval = 64;

Eigen::VectorXd stacked(const ModalState& s) {
    Eigen::VectorXd x(s.q.size() + s.qdot.size());
    x << s.q, s.qdot;
    return x;
}

Eigen::VectorXd or_zero(const Eigen::VectorXd& v, int n) { return v.size() ? v : Eigen::VectorXd::Zero(n); }

}  // namespace

LqTpbvp::LqTpbvp(const OcpSpec& spec) {
    spec.validate();
    const ModalSystem& msys = spec.msys;
    const int n = msys.size();
    const int nx = 2 * n;
    t0_ = spec.grid.t0;
    tf_ = spec.grid.tf;
    rho_ = spec.control_weight;
    weight_ = spec.weights().state.cast<long double>();

    WideMatrix a = WideMatrix::Zero(nx, nx);
    a.topRightCorner(n, n).setIdentity();
    for (int j = 0; j < n; ++j) a(n + j, j) = -static_cast<long double>(msys.eigenvalues(j));
    input_ = WideVector::Zero(nx);
    input_.tail(n) = msys.input.cast<long double>();

    hamiltonian_.resize(2 * nx, 2 * nx);
    hamiltonian_ << a, -input_ * input_.transpose() / static_cast<long double>(rho_), -weight_, -a.transpose();

    const WideVector x0 = stacked(to_modal(msys, spec.xi_start, or_zero(spec.xi_dot_start, n))).cast<long double>();
    const WideVector xf = stacked(to_modal(msys, spec.xi_end, or_zero(spec.xi_dot_end, n))).cast<long double>();

    const WideMatrix phi = (hamiltonian_ * static_cast<long double>(tf_ - t0_)).exp();
    const WideMatrix phi12 = phi.topRightCorner(nx, nx);
    const Eigen::JacobiSVD<WideMatrix> svd(phi12);
    const WideVector sv = svd.singularValues();
    condition_ = sv(sv.size() - 1) > 0 ? static_cast<double>(sv(0) / sv(sv.size() - 1))
                                       : std::numeric_limits<double>::infinity();
    if (!(condition_ <= 1e12)) {
        char buf[160];
        std::snprintf(buf, sizeof buf,
                      "reference_oracles: boundary solve condition %.3g exceeds 1e12 over a %.4g s horizon; "
                      "change the horizon or use a higher-precision path",
                      condition_, tf_ - t0_);
        throw NumericError(buf);
    }
    const WideVector target = xf - phi.topLeftCorner(nx, nx) * x0;
    const Eigen::FullPivLU<WideMatrix> lu(phi12);
    WideVector lam0 = lu.solve(target);
    lam0 += lu.solve(WideVector(target - phi12 * lam0));
    start_.resize(2 * nx);
    start_ << x0, lam0;

    // Composite Gauss-Legendre; panels short against the fastest squared oscillation.
    const double span = tf_ - t0_;
    const double w_max = std::sqrt(std::max(msys.eigenvalues.maxCoeff(), 0.0));
    const int panels = std::max(16, static_cast<int>(std::ceil(span * 2.0 * w_max / 0.5)));
    const double h = span / panels;
    const QuadratureRule rule = gauss_legendre(8, 0.0, h);
    std::vector<WideMatrix> local;
    for (double node : rule.nodes) local.push_back((hamiltonian_ * static_cast<long double>(node)).exp());
    const WideMatrix panel_step = (hamiltonian_ * static_cast<long double>(h)).exp();
    long double total = 0.0L;
    WideVector y;
    for (int i = 0; i < panels; ++i) {
        y = i % anchor_interval == 0 ? augmented(t0_ + i * h) : WideVector(panel_step * y);
        for (std::size_t g = 0; g < local.size(); ++g) {
            const WideVector yg = local[g] * y;
            const WideVector x = yg.head(nx);
            const long double u = -input_.dot(yg.tail(nx)) / rho_;
            total += rule.weights[g] * (0.5L * x.dot(weight_ * x) + 0.5L * rho_ * u * u);
        }
    }
    cost_ = static_cast<double>(total);
}

LqTpbvp::WideVector LqTpbvp::augmented(double t) const {
    return (hamiltonian_ * static_cast<long double>(t - t0_)).exp() * start_;
}

Eigen::VectorXd LqTpbvp::state(double t) const { return augmented(t).head(start_.size() / 2).cast<double>(); }

Eigen::VectorXd LqTpbvp::costate(double t) const { return augmented(t).tail(start_.size() / 2).cast<double>(); }

double LqTpbvp::control(double t) const {
    return static_cast<double>(-input_.dot(augmented(t).tail(start_.size() / 2)) / rho_);
}

ModalState LqTpbvp::modal_state(double t) const {
    const Eigen::VectorXd x = state(t);
    const Eigen::Index n = x.size() / 2;
    return {x.head(n), x.tail(n)};
}

LqSeries LqTpbvp::sample(const std::vector<double>& times) const {
    const Eigen::Index nx = start_.size() / 2;
    const auto count = static_cast<Eigen::Index>(times.size());
    LqSeries out;
    out.times = times;
    out.state.resize(nx, count);
    out.costate.resize(nx, count);
    out.control.resize(count);
    out.cost = cost_;

    WideVector y;
    WideMatrix step;
    double step_dt = 0.0;
    int since_anchor = 0;
    for (Eigen::Index i = 0; i < count; ++i) {
        const double t = times[i];
        const double gap = i > 0 ? t - times[i - 1] : 0.0;
        if (i == 0 || gap <= 0.0 || since_anchor >= anchor_interval) {
            y = augmented(t);
            since_anchor = 0;
        } else {
            const double slack = 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t));
            if (step_dt <= 0.0 || std::abs(gap - step_dt) > slack) {
                step = (hamiltonian_ * static_cast<long double>(gap)).exp();
                step_dt = gap;
            }
            y = step * y;
            ++since_anchor;
        }
        out.state.col(i) = y.head(nx).cast<double>();
        out.costate.col(i) = y.tail(nx).cast<double>();
        out.control(i) = static_cast<double>(-input_.dot(y.tail(nx)) / rho_);
    }
    return out;
}

LqSeries lq_tpbvp_reference(const OcpSpec& spec, const std::vector<double>& times) {
    return LqTpbvp(spec).sample(times);
}

std::vector<double> macro_times(const MultirateGrid& grid) {
    std::vector<double> t(grid.macro_count + 1);
    for (int k = 0; k <= grid.macro_count; ++k) t[k] = grid.macro_time(k);
    return t;
}

std::vector<double> micro_midpoints(const MultirateGrid& grid) {
    std::vector<double> t(grid.num_micro_intervals());
    for (int j = 0; j < grid.num_micro_intervals(); ++j) t[j] = grid.t0 + (j + 0.5) * grid.micro_step;
    return t;
}

OcpSolution fine_grid_reference(const OcpSpec& spec, int refinement, const KktOptions& options) {
    if (refinement < 1) throw ConfigError("reference_oracles: refinement factor must be >= 1");
    OcpSpec fine = spec;
    fine.grid = MultirateGrid::from_micro_step(spec.grid.t0, spec.grid.tf, spec.grid.micro_step / refinement, 1);
    return solve_maneuver(fine, options);
}

const ErrorGroup& ErrorReport::group(const std::string& name) const {
    for (const ErrorGroup& g : groups)
        if (g.name == name) return g;
    throw DomainError("reference_oracles: no error group named " + name);
}

ErrorReport error_metrics(const GroupedSamples& candidate, const GroupedSamples& reference) {
    if (candidate.empty() || candidate.size() != reference.size()) {
        throw DomainError("reference_oracles: candidate and reference must carry the same nonempty groups");
    }
    ErrorReport report;
    report.node_count = static_cast<int>(candidate.front().second.cols());
    if (report.node_count == 0) throw DomainError("reference_oracles: empty node set");
    double ref_max = 0.0;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        const auto& [name, c] = candidate[i];
        const auto& [ref_name, r] = reference[i];
        if (name != ref_name || c.rows() != r.rows() || c.cols() != r.cols() || c.cols() != report.node_count) {
            throw DomainError("reference_oracles: group " + name + " does not match its reference");
        }
        ErrorGroup g{name, 0.0, 0.0};
        g.absolute = c.rows() ? (c - r).cwiseAbs().maxCoeff() : 0.0;
        const double gmax = r.rows() ? r.cwiseAbs().maxCoeff() : 0.0;
        g.relative = gmax > 0.0 ? g.absolute / gmax : std::numeric_limits<double>::quiet_NaN();
        report.absolute = std::max(report.absolute, g.absolute);
        ref_max = std::max(ref_max, gmax);
        report.groups.push_back(g);
    }
    if (!(ref_max > 0.0)) throw DomainError("reference_oracles: reference is identically zero, relative error undefined");
    report.relative = report.absolute / ref_max;
    return report;
}

GroupedSamples modal_samples(const MultirateTrajectory& traj) {
    const int ns = traj.grid.macro_count;
    const int p = traj.grid.micro_count;
    Eigen::MatrixXd fast(traj.num_fast(), ns + 1);
    for (int k = 0; k <= ns; ++k) fast.col(k) = traj.fast.col(k * p);
    return {{"slow", traj.slow}, {"fast", fast}};
}

GroupedSamples physical_samples(const ModalSystem& msys, const MultirateTrajectory& traj) {
    Eigen::MatrixXd xi(msys.size(), traj.grid.macro_count + 1);
    for (int k = 0; k <= traj.grid.macro_count; ++k) xi.col(k) = msys.modal_matrix * traj.modal_config(k);
    return {{"config", xi}};
}

GroupedSamples control_samples(const MultirateTrajectory& traj) {
    return {{"control", traj.control.transpose()}};
}

GroupedSamples modal_samples(const MultirateGrid& grid, int num_slow,
                             const std::function<ModalState(double)>& reference) {
    Eigen::MatrixXd slow, fast;
    for (int k = 0; k <= grid.macro_count; ++k) {
        const ModalState s = reference(grid.macro_time(k));
        if (k == 0) {
            slow.resize(num_slow, grid.macro_count + 1);
            fast.resize(s.q.size() - num_slow, grid.macro_count + 1);
        }
        slow.col(k) = s.q.head(num_slow);
        fast.col(k) = s.q.tail(s.q.size() - num_slow);
    }
    return {{"slow", slow}, {"fast", fast}};
}

GroupedSamples physical_samples(const ModalSystem& msys, const MultirateGrid& grid,
                                const std::function<ModalState(double)>& reference) {
    Eigen::MatrixXd xi(msys.size(), grid.macro_count + 1);
    for (int k = 0; k <= grid.macro_count; ++k) xi.col(k) = msys.modal_matrix * reference(grid.macro_time(k)).q;
    return {{"config", xi}};
}

GroupedSamples control_samples(const MultirateGrid& grid, const std::function<double(double)>& reference) {
    const int n = grid.num_micro_intervals();
    Eigen::MatrixXd u(1, n);
    for (int j = 0; j < n; ++j) u(0, j) = reference(grid.t0 + (j + 0.5) * grid.micro_step);
    return {{"control", u}};
}

GroupedSamples physical_samples(const ModalSystem& msys, const LqSeries& at_macro_nodes) {
    const int n = msys.size();
    if (at_macro_nodes.state.rows() != 2 * n) throw DomainError("reference_oracles: series does not match the system");
    return {{"config", msys.modal_matrix * at_macro_nodes.state.topRows(n)}};
}

GroupedSamples control_samples(const LqSeries& at_midpoints) {
    return {{"control", at_midpoints.control.transpose()}};
}

}  // namespace mrdmoc
