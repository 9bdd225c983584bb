#include "mrdmoc/studies.hpp"

#include "mrdmoc/errors.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <random>
#include <thread>

namespace mrdmoc {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

const double kNaN = std::numeric_limits<double>::quiet_NaN();

// Runs fn(i) for i in [0, n) on up to `jobs` threads; results keep index order.
template <class T>
std::vector<T> parallel_map(int n, int jobs, const std::function<T(int)>& fn) {
    std::vector<T> out(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                out[i] = fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int threads = std::max(1, std::min(jobs, n));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

std::vector<std::size_t> thinned(std::size_t n, int max_points) {
    const std::size_t stride = std::max<std::size_t>(1, (n + max_points - 1) / max_points);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; i += stride) idx.push_back(i);
    if (!idx.empty() && idx.back() != n - 1) idx.push_back(n - 1);
    return idx;
}

ModalState initial_modal_state(const ModalSystem& msys, const FreeResponseSection& f) {
    return to_modal(msys, f.initial_config(), f.initial_rates());
}

OcpSpec maneuver_spec(const ModalSystem& msys, const MultirateGrid& grid, const ManeuverSection& m) {
    OcpSpec spec = OcpSpec::rest_to_rest(msys, grid, m.theta_tf_deg);
    if (m.xi_start.size()) {
        spec.xi_start = m.xi_start;
        spec.xi_end = m.xi_end;
    }
    return spec;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Window {
    double lo = 0.0;
    double hi = 0.0;
};

Window fit_window(const StudySection& s, const ModalSystem& msys) {
    return {s.fit_dt_min_s, s.fit_dt_max_s > 0.0 ? s.fit_dt_max_s : automatic_fit_limit(msys)};
}

}  // namespace

// ---- fits -------------------------------------------------------------------

OrderFit fit_order(const std::vector<double>& dt, const std::vector<double>& error, double lo, double hi) {
    if (dt.size() != error.size()) throw DomainError("studies: fit_order needs matching dt and error lists");
    const double upper = hi > 0.0 ? hi * (1.0 + 1e-12) : std::numeric_limits<double>::infinity();
    const double lower = lo * (1.0 - 1e-12);
    std::vector<double> x;
    std::vector<double> y;
    OrderFit fit;
    for (std::size_t i = 0; i < dt.size(); ++i) {
        if (dt[i] < lower || dt[i] > upper || !(error[i] > 0.0) || !std::isfinite(error[i])) continue;
        x.push_back(std::log(dt[i]));
        y.push_back(std::log(error[i]));
        fit.dt_min = x.size() == 1 ? dt[i] : std::min(fit.dt_min, dt[i]);
        fit.dt_max = x.size() == 1 ? dt[i] : std::max(fit.dt_max, dt[i]);
    }
    fit.points = static_cast<int>(x.size());
    if (fit.points < 2) {
        fit.order = kNaN;
        return fit;
    }
    fit.order = linear_fit(x, y).first;
    return fit;
}

double automatic_fit_limit(const ModalSystem& msys) {
    return 0.2 / std::sqrt(msys.eigenvalues.maxCoeff());
}

double error_floor_limit(const std::vector<double>& dt, const std::vector<double>& error, double hi) {
    if (dt.size() != error.size()) throw DomainError("studies: error_floor_limit needs matching lists");
    const double upper = hi > 0.0 ? hi * (1.0 + 1e-12) : std::numeric_limits<double>::infinity();
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < dt.size(); ++i) {
        if (dt[i] > 0.0 && dt[i] <= upper) pts.emplace_back(dt[i], error[i]);
    }
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (!(pts[i].second <= 0.7 * pts[i - 1].second)) return pts[i - 1].first;
    }
    return 0.0;
}

std::pair<double, double> linear_fit(const std::vector<double>& t, const std::vector<double>& e) {
    const std::size_t n = t.size();
    if (n < 2 || e.size() != n) throw DomainError("studies: linear fit needs at least two matching points");
    const double tm = std::accumulate(t.begin(), t.end(), 0.0) / n;
    const double em = std::accumulate(e.begin(), e.end(), 0.0) / n;
    double stt = 0.0;
    double ste = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        stt += (t[i] - tm) * (t[i] - tm);
        ste += (t[i] - tm) * (e[i] - em);
    }
    if (!(stt > 0.0)) throw DomainError("studies: linear fit needs distinct abscissae");
    const double slope = ste / stt;
    return {slope, em - slope * tm};
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return kNaN;
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1));
}

// ---- integrator -------------------------------------------------------------

IntegratorErrors integrator_errors(const ModalSystem& msys, const ModalState& initial, double tf, double dt, int p) {
    const MultirateGrid grid = MultirateGrid::from_micro_step(0.0, tf, dt, p);
    const auto start = Clock::now();
    const MultirateTrajectory traj = simulate(msys, grid, initial, Eigen::VectorXd::Zero(grid.num_micro_intervals()));
    IntegratorErrors out;
    out.seconds = seconds_since(start);
    const ErrorReport rep = error_metrics(
        modal_samples(traj),
        modal_samples(grid, msys.num_slow(), [&](double t) { return free_response(msys, initial, t); }));
    out.slow = rep.group("slow").absolute;
    out.fast = rep.group("fast").absolute;
    return out;
}

ConservationReport conservation_check(const ModalSystem& msys, const ModalState& initial, const MultirateGrid& grid) {
    ConservationReport out;
    auto start = Clock::now();
    const MultirateTrajectory traj = simulate(msys, grid, initial, Eigen::VectorXd::Zero(grid.num_micro_intervals()));
    out.seconds = seconds_since(start);
    out.diagnostics = diagnostics(msys, traj);
    const Diagnostics& d = out.diagnostics;

    const auto [lo, hi] = std::minmax_element(d.interval_energy.begin(), d.interval_energy.end());
    out.energy0 = d.interval_energy.front();
    out.energy_peak_to_peak = *hi - *lo;
    out.energy_slope = linear_fit(d.interval_time, d.interval_energy).first;
    const double span = d.interval_time.back() - d.interval_time.front();
    out.energy_slope_ratio =
        out.energy_peak_to_peak > 0.0 ? std::abs(out.energy_slope) * span / out.energy_peak_to_peak : 0.0;

    out.momentum_scale = std::abs(d.p_theta.front());
    for (int k = 0; k <= grid.macro_count; ++k) {
        out.p_theta_drift = std::max(out.p_theta_drift, std::abs(d.p_theta[k] - d.p_theta.front()));
        out.momentum_scale = std::max(out.momentum_scale, node_momentum(msys, traj, k).cwiseAbs().maxCoeff());
    }
    out.p_theta_rel_drift = out.momentum_scale > 0.0 ? out.p_theta_drift / out.momentum_scale : out.p_theta_drift;

    start = Clock::now();
    const Rk4Run rk = rk4_simulate(msys, initial, grid.micro_step, grid.num_micro_intervals());
    out.rk4_seconds = seconds_since(start);
    out.rk4_monotone = true;
    for (int k = 0; k <= grid.macro_count; ++k) {
        const int j = k * grid.micro_count;
        out.rk4_time.push_back(grid.macro_time(k));
        out.rk4_energy.push_back(modal_energy(msys, {rk.q.col(j), rk.qdot.col(j)}));
        if (k > 0 && out.rk4_energy[k] > out.rk4_energy[k - 1]) out.rk4_monotone = false;
    }
    out.rk4_energy_drift = out.rk4_energy.front() - out.rk4_energy.back();
    return out;
}

// ---- optimal control --------------------------------------------------------

OcpErrors ocp_errors(const OcpSpec& spec, const LqTpbvp& reference) {
    OcpErrors out;
    const auto start = Clock::now();
    out.solution = solve_maneuver(spec);
    out.seconds = seconds_since(start);
    const MultirateGrid& g = spec.grid;
    const MultirateTrajectory& traj = out.solution.trajectory;

    out.cost_abs = std::abs(out.solution.cost - reference.cost());
    out.cost_rel = out.cost_abs / std::abs(reference.cost());

    const ErrorReport xi = error_metrics(physical_samples(spec.msys, traj),
                                         physical_samples(spec.msys, reference.sample(macro_times(g))));
    out.xi_abs = xi.absolute;
    out.xi_rel = xi.relative;

    const ErrorReport u = error_metrics(control_samples(traj), control_samples(reference.sample(micro_midpoints(g))));
    out.control_abs = u.absolute;
    out.control_rel = u.relative;

    std::vector<double> mid(g.macro_count);
    Eigen::MatrixXd tau_mean(1, g.macro_count);
    for (int k = 0; k < g.macro_count; ++k) {
        mid[k] = g.macro_time(k) + 0.5 * g.macro_step;
        tau_mean(0, k) = traj.control_block(k).mean();
    }
    const LqSeries at_mid = reference.sample(mid);
    const ErrorReport um = error_metrics({{"control", tau_mean}}, {{"control", at_mid.control.transpose()}});
    out.control_mean_abs = um.absolute;
    out.control_mean_rel = um.relative;
    return out;
}

TradeoffPoint size_counts(const OcpSpec& spec) {
    const MultirateGrid& g = spec.grid;
    const int r = spec.msys.num_slow();
    const int n = spec.msys.size() - 1;
    const VariableLayout layout(r, spec.msys.num_fast(), g.macro_count, g.micro_count);
    TradeoffPoint t;
    t.n_slow_var = layout.n_slow_var();
    t.n_fast_var = layout.n_fast_var();
    t.n_total_var = layout.n_total_var();
    t.n_eq_con = layout.n_eq_con();
    const double span = g.tf - g.t0;
    t.formula_slow_var = VariableLayout::formula_slow_var(g.micro_count, r, n, span, g.micro_step);
    t.formula_fast_var = VariableLayout::formula_fast_var(r, n, span, g.micro_step);
    t.formula_total_var = t.formula_slow_var + t.formula_fast_var;
    t.formula_eq_con = VariableLayout::formula_eq_con(g.micro_count, r, n, span, g.micro_step);
    return t;
}

Timing time_solve(const OcpSpec& spec, const KktOptions& options) {
    Timing t;
    auto start = Clock::now();
    const AssembledOcp problem = assemble(spec);
    t.assemble = seconds_since(start);
    start = Clock::now();
    const KktResult kkt = solve_kkt(problem.qp, options);
    t.solve = seconds_since(start);
    if (!kkt.converged) throw NumericError("studies: timed KKT solve missed its residual targets");
    return t;
}

// ---- harness ----------------------------------------------------------------

ModalSystem build_modal_system(const RunConfig& config, int split) {
    return solve_modal(assemble_system(config.spacecraft), split);
}

namespace {

class Harness {
public:
    Harness(const RunConfig& config, const RunOptions& options) : c_(config), o_(options) {}

    StudyResult run() {
        for (StudyKind k : c_.study.kinds) {
            switch (k) {
                case StudyKind::FreeResponse: free_response(); break;
                case StudyKind::Conservation: conservation(); break;
                case StudyKind::ConvergenceIntegrator: convergence_integrator(); break;
                case StudyKind::ConvergenceOcp: convergence_ocp(); break;
                case StudyKind::Tradeoff: tradeoff(); break;
                case StudyKind::Maneuver: maneuver(); break;
            }
        }
        return std::move(res_);
    }

private:
    void row(const char* study, int p, int r, double dt, const std::string& metric, double value, int rep = 0) {
        res_.rows.push_back({study, p, r, dt, c_.grid.tf_s, metric, value, rep});
    }
    void note(const std::string& s) { res_.log.push_back(s); }
    void summary(const std::string& key, double v) { res_.summary.emplace_back(key, fmt("%.3e", v)); }

    const ModalSystem& modal(int r) {
        auto it = systems_.find(r);
        if (it == systems_.end()) {
            if (systems_.empty()) {
                it = systems_.emplace(r, build_modal_system(c_, r)).first;
            } else {
                it = systems_.emplace(r, systems_.begin()->second.with_split(r)).first;
            }
        }
        return it->second;
    }

    MultirateGrid grid(double dt, int p) const { return MultirateGrid::from_micro_step(0.0, c_.grid.tf_s, dt, p); }

    void free_response() {
        const char* name = "free_response";
        const int r = c_.split;
        const ModalSystem& msys = modal(r);
        const MultirateGrid g = grid(c_.grid.dt_s, c_.grid.p);
        const MultirateTrajectory traj =
            simulate(msys, g, initial_modal_state(msys, *c_.free_response), Eigen::VectorXd::Zero(g.num_micro_intervals()));
        const Diagnostics d = diagnostics(msys, traj);
        double pt_drift = 0.0;
        double noether = 0.0;
        for (std::size_t k = 0; k < d.time.size(); ++k) {
            pt_drift = std::max(pt_drift, std::abs(d.p_theta[k] - d.p_theta[0]));
            noether = std::max(noether, std::abs(d.noether[k]));
        }
        const auto [elo, ehi] = std::minmax_element(d.interval_energy.begin(), d.interval_energy.end());
        row(name, g.micro_count, r, g.micro_step, "energy_initial", d.interval_energy.front());
        row(name, g.micro_count, r, g.micro_step, "energy_peak_to_peak", *ehi - *elo);
        row(name, g.micro_count, r, g.micro_step, "p_theta_max_drift", pt_drift);
        row(name, g.micro_count, r, g.micro_step, "noether_max", noether);
        row(name, g.micro_count, r, g.micro_step, "momentum_mismatch", momentum_mismatch(msys, traj));
        summary("free_response.momentum_mismatch", momentum_mismatch(msys, traj));

        Series s{"free_response", {"t_s", "theta_rad"}, {}};
        for (int i = 1; i < msys.size(); ++i) s.columns.push_back("eta" + std::to_string(i));
        s.columns.insert(s.columns.end(), {"energy_node", "p_theta"});
        Plot hub{"free_response_theta", "Hub angle", "t [s]", "theta [rad]", false, {{"theta", {}, {}}}};
        Plot tip{"free_response_eta", "Appendage amplitudes", "t [s]", "eta", false, {}};
        for (int i = 1; i < msys.size(); ++i) tip.lines.push_back({"eta" + std::to_string(i), {}, {}});
        for (std::size_t k : thinned(d.time.size(), c_.study.series_points)) {
            const ModalState q{traj.modal_config(static_cast<int>(k)), Eigen::VectorXd::Zero(msys.size())};
            const Eigen::VectorXd xi = from_modal(msys, q).xi;
            std::vector<double> line{d.time[k]};
            for (int i = 0; i < xi.size(); ++i) line.push_back(xi(i));
            line.push_back(d.energy[k]);
            line.push_back(d.p_theta[k]);
            s.rows.push_back(line);
            hub.lines[0].x.push_back(d.time[k]);
            hub.lines[0].y.push_back(xi(0));
            for (int i = 1; i < xi.size(); ++i) {
                tip.lines[i - 1].x.push_back(d.time[k]);
                tip.lines[i - 1].y.push_back(xi(i));
            }
        }
        res_.series.push_back(std::move(s));
        res_.plots.push_back(std::move(hub));
        res_.plots.push_back(std::move(tip));
    }

    void conservation() {
        const char* name = "conservation";
        const int r = c_.split;
        const ModalSystem& msys = modal(r);
        const MultirateGrid g = grid(c_.grid.dt_s, c_.grid.p);
        const ConservationReport rep = conservation_check(msys, initial_modal_state(msys, *c_.free_response), g);
        const int p = g.micro_count;
        const double dt = g.micro_step;
        row(name, p, r, dt, "energy_initial", rep.energy0);
        row(name, p, r, dt, "energy_peak_to_peak_rel", rep.energy_peak_to_peak / rep.energy0);
        row(name, p, r, dt, "energy_slope_per_s", rep.energy_slope);
        row(name, p, r, dt, "energy_slope_ratio", rep.energy_slope_ratio);
        row(name, p, r, dt, "energy_secular_drift", std::abs(rep.energy_slope) * (g.tf - g.t0));
        row(name, p, r, dt, "p_theta_max_drift", rep.p_theta_drift);
        row(name, p, r, dt, "p_theta_rel_drift", rep.p_theta_rel_drift);
        row(name, p, r, dt, "rk4_energy_drift", rep.rk4_energy_drift);
        row(name, p, r, dt, "rk4_energy_monotone", rep.rk4_monotone ? 1.0 : 0.0);
        row(name, p, r, dt, "wall_s", rep.seconds);
        row(name, p, r, dt, "rk4_wall_s", rep.rk4_seconds);
        summary("conservation.p_theta_rel_drift", rep.p_theta_rel_drift);
        summary("conservation.energy_slope_ratio", rep.energy_slope_ratio);
        note("conservation: energy slope ratio " + fmt("%.3g", rep.energy_slope_ratio) + ", RK4 drift " +
             fmt("%.3g", rep.rk4_energy_drift) + " vs variational secular drift " +
             fmt("%.3g", std::abs(rep.energy_slope) * (g.tf - g.t0)));

        const Diagnostics& d = rep.diagnostics;
        Series s{"conservation", {"t_s", "energy_rel_dev", "p_theta", "rk4_energy_rel_dev"}, {}};
        Plot plot{"conservation_energy", "Relative energy deviation", "t [s]", "(E - E0) / E0", false,
                  {{"multirate variational", {}, {}}, {"RK4", {}, {}}}};
        for (std::size_t k : thinned(d.interval_time.size(), c_.study.series_points)) {
            const double ev = (d.interval_energy[k] - rep.energy0) / rep.energy0;
            const double er = (rep.rk4_energy[k] - rep.rk4_energy.front()) / rep.rk4_energy.front();
            s.rows.push_back({d.interval_time[k], ev, d.p_theta[k], er});
            plot.lines[0].x.push_back(d.interval_time[k]);
            plot.lines[0].y.push_back(ev);
            plot.lines[1].x.push_back(rep.rk4_time[k]);
            plot.lines[1].y.push_back(er);
        }
        res_.series.push_back(std::move(s));
        res_.plots.push_back(std::move(plot));
    }

    void emit_fit(const char* study, int p, int r, const char* metric, const std::vector<double>& dts,
                  const std::vector<double>& err, const Window& w) {
        double lo = w.lo;
        if (lo <= 0.0) {
            lo = error_floor_limit(dts, err, w.hi);
            if (lo > 0.0) {
                note(std::string(study) + ": p=" + std::to_string(p) + " " + metric + " stops converging below dt = " +
                     fmt("%.3g", lo) + " s, excluded from the fit");
            }
        }
        const OrderFit fit = fit_order(dts, err, lo, w.hi);
        if (fit.points < 2) return;
        row(study, p, r, 0.0, std::string(metric) + "_order", fit.order);
        row(study, p, r, 0.0, std::string(metric) + "_fit_points", fit.points);
    }

    void convergence_integrator() {
        const char* name = "convergence_integrator";
        const int r = c_.split;
        const ModalSystem& msys = modal(r);
        const ModalState init = initial_modal_state(msys, *c_.free_response);
        const auto& dts = c_.study.dt_list_s;
        const auto& ps = c_.study.p_list;
        const int n = static_cast<int>(dts.size() * ps.size());
        const auto out = parallel_map<IntegratorErrors>(n, o_.jobs, [&](int i) {
            return integrator_errors(msys, init, c_.grid.tf_s, dts[i % dts.size()], ps[i / dts.size()]);
        });
        const Window w = fit_window(c_.study, msys);
        note(std::string(name) + ": fit window dt in [" + fmt("%.3g", w.lo) + ", " + fmt("%.3g", w.hi) + "] s");
        Plot plot{"convergence_integrator", "Integrator error at macro nodes", "dt [s]", "max error", true, {}};
        for (std::size_t ip = 0; ip < ps.size(); ++ip) {
            std::vector<double> slow;
            std::vector<double> fast;
            for (std::size_t id = 0; id < dts.size(); ++id) {
                const IntegratorErrors& e = out[ip * dts.size() + id];
                row(name, ps[ip], r, dts[id], "slow_error", e.slow);
                row(name, ps[ip], r, dts[id], "fast_error", e.fast);
                row(name, ps[ip], r, dts[id], "wall_s", e.seconds);
                slow.push_back(e.slow);
                fast.push_back(e.fast);
            }
            emit_fit(name, ps[ip], r, "slow", dts, slow, w);
            emit_fit(name, ps[ip], r, "fast", dts, fast, w);
            plot.lines.push_back({"slow p=" + std::to_string(ps[ip]), dts, slow});
            plot.lines.push_back({"fast p=" + std::to_string(ps[ip]), dts, fast});
        }
        if (ps.size() > 1) {
            for (std::size_t id = 0; id < dts.size(); ++id) {
                double lo = std::numeric_limits<double>::infinity();
                double hi = 0.0;
                for (std::size_t ip = 0; ip < ps.size(); ++ip) {
                    lo = std::min(lo, out[ip * dts.size() + id].fast);
                    hi = std::max(hi, out[ip * dts.size() + id].fast);
                }
                row(name, 0, r, dts[id], "fast_error_spread_across_p", lo > 0.0 ? hi / lo - 1.0 : 0.0);
            }
        }
        res_.plots.push_back(std::move(plot));
    }

    void record_solution(const char* study, const OcpSolution& s, int p, int r, double dt) {
        row(study, p, r, dt, "primal_residual", s.primal_residual);
        row(study, p, r, dt, "stationarity_residual", s.stationarity_residual);
        row(study, p, r, dt, "integrator_residual", s.integrator_residual);
        row(study, p, r, dt, "extended_precision", s.extended_precision ? 1.0 : 0.0);
        worst_primal_ = std::max(worst_primal_, s.primal_residual);
        worst_stationarity_ = std::max(worst_stationarity_, s.stationarity_residual);
        worst_integrator_ = std::max(worst_integrator_, s.integrator_residual);
        for (const auto& w : s.warnings) note(std::string(study) + ": " + w);
    }

    void flush_residual_summary(const char* study) {
        summary(std::string(study) + ".max_primal_residual", worst_primal_);
        summary(std::string(study) + ".max_stationarity_residual", worst_stationarity_);
        summary(std::string(study) + ".max_integrator_residual", worst_integrator_);
        worst_primal_ = worst_stationarity_ = worst_integrator_ = 0.0;
    }

    void convergence_ocp() {
        const char* name = "convergence_ocp";
        const int r = c_.split;
        const ModalSystem& msys = modal(r);
        const auto& dts = c_.study.dt_list_s;
        const auto& ps = c_.study.p_list;
        const LqTpbvp ref(maneuver_spec(msys, grid(dts.front(), ps.front()), *c_.maneuver));
        row(name, 0, r, 0.0, "reference_cost", ref.cost());
        row(name, 0, r, 0.0, "reference_boundary_condition", ref.boundary_condition());
        const int n = static_cast<int>(dts.size() * ps.size());
        const auto out = parallel_map<OcpErrors>(n, o_.jobs, [&](int i) {
            return ocp_errors(maneuver_spec(msys, grid(dts[i % dts.size()], ps[i / dts.size()]), *c_.maneuver), ref);
        });
        const Window w = fit_window(c_.study, msys);
        note(std::string(name) + ": fit window dt in [" + fmt("%.3g", w.lo) + ", " + fmt("%.3g", w.hi) + "] s");
        Plot plot{"convergence_ocp", "OCP error against the LQ reference", "dt [s]", "error", true, {}};
        for (std::size_t ip = 0; ip < ps.size(); ++ip) {
            std::vector<double> cost;
            std::vector<double> xi;
            std::vector<double> u;
            std::vector<double> um;
            for (std::size_t id = 0; id < dts.size(); ++id) {
                const OcpErrors& e = out[ip * dts.size() + id];
                const int p = ps[ip];
                row(name, p, r, dts[id], "cost", e.solution.cost);
                row(name, p, r, dts[id], "cost_abs_error", e.cost_abs);
                row(name, p, r, dts[id], "cost_rel_error", e.cost_rel);
                row(name, p, r, dts[id], "xi_abs_error", e.xi_abs);
                row(name, p, r, dts[id], "xi_rel_error", e.xi_rel);
                row(name, p, r, dts[id], "control_abs_error", e.control_abs);
                row(name, p, r, dts[id], "control_rel_error", e.control_rel);
                row(name, p, r, dts[id], "control_mean_abs_error", e.control_mean_abs);
                row(name, p, r, dts[id], "control_mean_rel_error", e.control_mean_rel);
                row(name, p, r, dts[id], "wall_s", e.seconds);
                record_solution(name, e.solution, p, r, dts[id]);
                cost.push_back(e.cost_abs);
                xi.push_back(e.xi_abs);
                u.push_back(e.control_abs);
                um.push_back(e.control_mean_abs);
            }
            emit_fit(name, ps[ip], r, "cost", dts, cost, w);
            emit_fit(name, ps[ip], r, "xi", dts, xi, w);
            emit_fit(name, ps[ip], r, "control", dts, u, w);
            emit_fit(name, ps[ip], r, "control_mean", dts, um, w);
            const std::string tag = " p=" + std::to_string(ps[ip]);
            plot.lines.push_back({"cost" + tag, dts, cost});
            plot.lines.push_back({"xi" + tag, dts, xi});
            plot.lines.push_back({"tau mean" + tag, dts, um});
        }
        flush_residual_summary(name);
        res_.plots.push_back(std::move(plot));
    }

    // Physical configuration at each macro node of grid, taken from a reference
    // that is either the TPBVP or a fine single-rate solve.
    struct XiReference {
        std::unique_ptr<LqTpbvp> tpbvp;
        OcpSolution fine;
        ModalSystem msys;

        GroupedSamples at(const MultirateGrid& grid) const {
            if (tpbvp) return physical_samples(msys, tpbvp->sample(macro_times(grid)));
            const MultirateTrajectory& f = fine.trajectory;
            return physical_samples(msys, grid, [&](double t) {
                const int j = static_cast<int>(std::lround((t - f.grid.t0) / f.grid.micro_step));
                Eigen::VectorXd q(msys.size());
                q << f.slow.col(j), f.fast.col(j);
                return ModalState{q, Eigen::VectorXd::Zero(msys.size())};
            });
        }
    };

    void tradeoff() {
        const char* name = "tradeoff";
        const auto& ps = c_.study.p_list;
        const auto& rs = c_.study.r_list;
        const double dt = c_.grid.dt_s;

        XiReference ref;
        ref.msys = modal(rs.front());
        const OcpSpec base = maneuver_spec(ref.msys, grid(dt, 1), *c_.maneuver);
        try {
            ref.tpbvp = std::make_unique<LqTpbvp>(base);
            row(name, 0, 0, dt, "reference_is_tpbvp", 1.0);
        } catch (const NumericError& e) {
            note(std::string(name) + ": " + e.what() + "; using the fine single-rate reference");
            ref.fine = fine_grid_reference(base, c_.study.refinement);
            row(name, 0, 0, dt, "reference_is_tpbvp", 0.0);
        }

        struct Point {
            int p;
            int r;
        };
        std::vector<Point> points;
        for (int r : rs) {
            modal(r);
            for (int p : ps) points.push_back({p, r});
        }
        const auto out = parallel_map<TradeoffPoint>(static_cast<int>(points.size()), o_.jobs, [&](int i) {
            const OcpSpec spec = maneuver_spec(systems_.at(points[i].r), grid(dt, points[i].p), *c_.maneuver);
            TradeoffPoint t = size_counts(spec);
            const OcpSolution sol = solve_maneuver(spec);
            t.xi_rel = error_metrics(physical_samples(spec.msys, sol.trajectory), ref.at(spec.grid)).relative;
            t.fine_reference = !ref.tpbvp;
            return t;
        });

        // Timing: serial, untouched by --jobs; the seed only permutes the order.
        std::vector<std::pair<int, int>> schedule;
        for (int i = 0; i < static_cast<int>(points.size()); ++i) {
            for (int k = 0; k < c_.study.repetitions; ++k) schedule.emplace_back(i, k);
        }
        std::mt19937_64 rng(o_.seed);
        std::shuffle(schedule.begin(), schedule.end(), rng);
        std::vector<std::vector<Timing>> timings(points.size(), std::vector<Timing>(c_.study.repetitions));
        for (const auto& [i, k] : schedule) {
            timings[i][k] = time_solve(maneuver_spec(systems_.at(points[i].r), grid(dt, points[i].p), *c_.maneuver));
        }

        std::map<int, std::vector<std::pair<int, double>>> totals_by_r;
        std::map<int, std::vector<std::pair<int, double>>> solves_by_r;
        std::map<int, PlotLine> erel_lines;
        std::map<int, PlotLine> time_lines;
        std::map<int, PlotLine> size_lines;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto [p, r] = points[i];
            const TradeoffPoint& t = out[i];
            row(name, p, r, dt, "n_slow_var", t.n_slow_var);
            row(name, p, r, dt, "n_fast_var", t.n_fast_var);
            row(name, p, r, dt, "n_total_var", t.n_total_var);
            row(name, p, r, dt, "n_eq_con", t.n_eq_con);
            row(name, p, r, dt, "formula_n_slow_var", t.formula_slow_var);
            row(name, p, r, dt, "formula_n_fast_var", t.formula_fast_var);
            row(name, p, r, dt, "formula_n_total_var", t.formula_total_var);
            row(name, p, r, dt, "formula_n_eq_con", t.formula_eq_con);
            row(name, p, r, dt, "xi_rel_error", t.xi_rel);
            std::vector<double> as;
            std::vector<double> ss;
            std::vector<double> ts;
            for (int k = 0; k < c_.study.repetitions; ++k) {
                const Timing& tm = timings[i][k];
                row(name, p, r, dt, "assemble_s", tm.assemble, k);
                row(name, p, r, dt, "solve_s", tm.solve, k);
                row(name, p, r, dt, "total_s", tm.assemble + tm.solve, k);
                as.push_back(tm.assemble);
                ss.push_back(tm.solve);
                ts.push_back(tm.assemble + tm.solve);
            }
            row(name, p, r, dt, "assemble_s_mean", mean(as));
            row(name, p, r, dt, "assemble_s_sd", sample_sd(as));
            row(name, p, r, dt, "solve_s_mean", mean(ss));
            row(name, p, r, dt, "solve_s_sd", sample_sd(ss));
            row(name, p, r, dt, "total_s_mean", mean(ts));
            row(name, p, r, dt, "total_s_sd", sample_sd(ts));
            totals_by_r[r].emplace_back(p, mean(ts));
            solves_by_r[r].emplace_back(p, mean(ss));
            const std::string label = "r=" + std::to_string(r);
            for (auto* lines : {&erel_lines, &time_lines, &size_lines}) (*lines)[r].label = label;
            erel_lines[r].x.push_back(p);
            erel_lines[r].y.push_back(t.xi_rel);
            time_lines[r].x.push_back(p);
            time_lines[r].y.push_back(mean(ts));
            size_lines[r].x.push_back(p);
            size_lines[r].y.push_back(static_cast<double>(t.n_total_var));
        }
        auto trend = [&](const char* metric, std::map<int, std::vector<std::pair<int, double>>>& by_r) {
            for (auto& [r, v] : by_r) {
                if (v.size() < 2) continue;
                std::sort(v.begin(), v.end());
                bool decreasing = true;
                for (std::size_t i = 1; i < v.size(); ++i) decreasing = decreasing && v[i].second < v[i - 1].second;
                row(name, 0, r, dt, metric, decreasing ? 1.0 : 0.0);
            }
        };
        trend("total_s_mean_strictly_decreasing_in_p", totals_by_r);
        trend("solve_s_mean_strictly_decreasing_in_p", solves_by_r);

        Plot erel{"tradeoff_accuracy", "Relative configuration error", "p", "e_rel", false, {}};
        Plot time{"tradeoff_time", "Mean assemble + solve time", "p", "seconds", false, {}};
        Plot size{"tradeoff_size", "Optimization variables", "p", "n_total_var", false, {}};
        for (auto& [r, line] : erel_lines) erel.lines.push_back(line);
        for (auto& [r, line] : time_lines) time.lines.push_back(line);
        for (auto& [r, line] : size_lines) size.lines.push_back(line);
        res_.plots.push_back(std::move(erel));
        res_.plots.push_back(std::move(time));
        res_.plots.push_back(std::move(size));
    }

    void maneuver() {
        const char* name = "maneuver";
        const int r = c_.split;
        const ModalSystem& msys = modal(r);
        const MultirateGrid g = grid(c_.grid.dt_s, c_.grid.p);
        const OcpSpec spec = maneuver_spec(msys, g, *c_.maneuver);
        const auto start = Clock::now();
        const OcpSolution sol = solve_maneuver(spec);
        const double wall = seconds_since(start);
        const MultirateTrajectory& traj = sol.trajectory;
        const Diagnostics d = diagnostics(msys, traj);
        const int p = g.micro_count;
        const double dt = g.micro_step;

        const ModalState target = to_modal(msys, spec.xi_end, Eigen::VectorXd::Zero(msys.size()));
        Eigen::VectorXd end_momentum(msys.size());
        end_momentum << sol.slow_momentum.col(g.macro_count), sol.fast_momentum.col(g.num_micro_intervals());
        const double terminal_config = (traj.modal_config(g.macro_count) - target.q).cwiseAbs().maxCoeff();
        double noether = 0.0;
        double p_theta = 0.0;
        for (std::size_t k = 0; k < d.time.size(); ++k) {
            noether = std::max(noether, std::abs(d.noether[k]));
            p_theta = std::max(p_theta, std::abs(d.p_theta[k]));
        }
        row(name, p, r, dt, "cost", sol.cost);
        row(name, p, r, dt, "terminal_config_error", terminal_config);
        row(name, p, r, dt, "terminal_momentum_max", end_momentum.cwiseAbs().maxCoeff());
        row(name, p, r, dt, "noether_max", noether);
        row(name, p, r, dt, "p_theta_max", p_theta);
        row(name, p, r, dt, "noether_ratio", p_theta > 0.0 ? noether / p_theta : 0.0);
        row(name, p, r, dt, "control_max", traj.control.cwiseAbs().maxCoeff());
        row(name, p, r, dt, "wall_s", wall);
        record_solution(name, sol, p, r, dt);
        flush_residual_summary(name);
        summary("maneuver.noether_ratio", p_theta > 0.0 ? noether / p_theta : 0.0);

        Series s{"maneuver_state", {"t_s", "theta_deg"}, {}};
        for (int i = 1; i < msys.size(); ++i) s.columns.push_back("eta" + std::to_string(i));
        s.columns.insert(s.columns.end(), {"p_theta", "noether"});
        Plot hub{"maneuver_theta", "Hub angle", "t [s]", "theta [deg]", false, {{"theta", {}, {}}}};
        Plot tip{"maneuver_eta", "Appendage amplitudes", "t [s]", "eta", false, {}};
        Plot psi{"maneuver_noether", "Discrete Noether residual", "t [s]", "Psi", false, {{"Psi", {}, {}}}};
        for (int i = 1; i < msys.size(); ++i) tip.lines.push_back({"eta" + std::to_string(i), {}, {}});
        for (std::size_t k : thinned(d.time.size(), c_.study.series_points)) {
            const ModalState q{traj.modal_config(static_cast<int>(k)), Eigen::VectorXd::Zero(msys.size())};
            const Eigen::VectorXd xi = from_modal(msys, q).xi;
            const double theta_deg = xi(0) * 180.0 / std::numbers::pi;
            std::vector<double> line{d.time[k], theta_deg};
            for (int i = 1; i < xi.size(); ++i) line.push_back(xi(i));
            line.push_back(d.p_theta[k]);
            line.push_back(d.noether[k]);
            s.rows.push_back(line);
            hub.lines[0].x.push_back(d.time[k]);
            hub.lines[0].y.push_back(theta_deg);
            psi.lines[0].x.push_back(d.time[k]);
            psi.lines[0].y.push_back(d.noether[k]);
            for (int i = 1; i < xi.size(); ++i) {
                tip.lines[i - 1].x.push_back(d.time[k]);
                tip.lines[i - 1].y.push_back(xi(i));
            }
        }
        Series u{"maneuver_control", {"t_s", "tau"}, {}};
        Plot up{"maneuver_control", "Control torque", "t [s]", "tau", false, {{"tau", {}, {}}}};
        const std::vector<double> tm = micro_midpoints(g);
        for (std::size_t j : thinned(tm.size(), c_.study.series_points)) {
            u.rows.push_back({tm[j], traj.control(static_cast<Eigen::Index>(j))});
            up.lines[0].x.push_back(tm[j]);
            up.lines[0].y.push_back(traj.control(static_cast<Eigen::Index>(j)));
        }
        res_.series.push_back(std::move(s));
        res_.series.push_back(std::move(u));
        for (Plot* pl : {&hub, &tip, &up, &psi}) res_.plots.push_back(std::move(*pl));
    }

    const RunConfig& c_;
    RunOptions o_;
    StudyResult res_;
    std::map<int, ModalSystem> systems_;
    double worst_primal_ = 0.0;
    double worst_stationarity_ = 0.0;
    double worst_integrator_ = 0.0;
};

}  // namespace

StudyResult run_studies(const RunConfig& config, const RunOptions& options) {
    check_study_grids(config);
    return Harness(config, options).run();
}

}  // namespace mrdmoc
