#pragma once

/**
 * @file studies.hpp
 * @brief Sweep studies: integrator and OCP convergence, conservation,
 * accuracy/size trade-off, and single maneuver or free-response runs.
 *
 * The measurement kernels are usable on their own; run_studies wires them to
 * a RunConfig and produces tidy result rows, time series and plot specs.
 */

#include "mrdmoc/reference_oracles.hpp"
#include "mrdmoc/study_config.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mrdmoc {

// ---- fits -------------------------------------------------------------------

struct OrderFit {
    double order = 0.0;  // least-squares slope of log(error) against log(dt)
    int points = 0;
    double dt_min = 0.0;
    double dt_max = 0.0;
};

/// Fits over points with dt in [lo, hi] and error > 0. Fewer than two usable
/// points gives points < 2 and order NaN.
OrderFit fit_order(const std::vector<double>& dt, const std::vector<double>& error, double lo, double hi);

/// Upper end of the asymptotic range used when the config leaves it open:
/// dt * omega_max <= 0.2.
double automatic_fit_limit(const ModalSystem& msys);

/// Lower end of the asymptotic range: walking down from dt <= hi, the smallest
/// dt reached before the error first fails to drop by 30% between neighbours
/// (roundoff or solver floor).
/// 0 when the error keeps falling to the end of the sweep.
double error_floor_limit(const std::vector<double>& dt, const std::vector<double>& error, double hi);

/// Least-squares line through (t, e): slope and intercept.
std::pair<double, double> linear_fit(const std::vector<double>& t, const std::vector<double>& e);

// ---- integrator -------------------------------------------------------------

struct IntegratorErrors {
    double slow = 0.0;  // max over macro nodes of |q^s - exact|_inf
    double fast = 0.0;
    double seconds = 0.0;
};

IntegratorErrors integrator_errors(const ModalSystem& msys, const ModalState& initial, double tf, double dt, int p);

struct ConservationReport {
    double energy0 = 0.0;
    double energy_peak_to_peak = 0.0;  // of the interval energy
    double energy_slope = 0.0;         // least-squares, per second
    double energy_slope_ratio = 0.0;   // |slope| * T / peak-to-peak
    double p_theta_drift = 0.0;        // max_k |p_theta_k - p_theta_0|
    double momentum_scale = 0.0;       // max(|p_theta_0|, max_k ||p_k||_inf)
    double p_theta_rel_drift = 0.0;    // drift / momentum_scale
    double rk4_energy_drift = 0.0;     // E_0 - E_end of the RK4 run
    bool rk4_monotone = false;         // RK4 energy never increases
    double seconds = 0.0;
    double rk4_seconds = 0.0;
    Diagnostics diagnostics;
    std::vector<double> rk4_time;
    std::vector<double> rk4_energy;
};

/// Unforced multirate run on grid and an RK4 run at the micro step, both from initial.
ConservationReport conservation_check(const ModalSystem& msys, const ModalState& initial, const MultirateGrid& grid);

// ---- optimal control --------------------------------------------------------

struct OcpErrors {
    double cost_abs = 0.0;
    double cost_rel = 0.0;
    double xi_abs = 0.0;            // physical configuration at macro nodes
    double xi_rel = 0.0;
    double control_abs = 0.0;       // at micro midpoints
    double control_rel = 0.0;
    double control_mean_abs = 0.0;  // macro-interval mean of tau vs u at the interval midpoint
    double control_mean_rel = 0.0;
    double seconds = 0.0;
    OcpSolution solution;
};

OcpErrors ocp_errors(const OcpSpec& spec, const LqTpbvp& reference);

struct TradeoffPoint {
    long n_slow_var = 0;
    long n_fast_var = 0;
    long n_total_var = 0;
    long n_eq_con = 0;
    long formula_slow_var = 0;
    long formula_fast_var = 0;
    long formula_total_var = 0;
    long formula_eq_con = 0;
    double xi_rel = 0.0;
    bool fine_reference = false;  // TPBVP unusable, compared against fine_grid_reference
    std::vector<double> assemble_seconds;
    std::vector<double> solve_seconds;
};

/// Layout and formula counts only.
TradeoffPoint size_counts(const OcpSpec& spec);

struct Timing {
    double assemble = 0.0;
    double solve = 0.0;
};

/// Monotonic-clock time of assemble and solve_kkt for one solve.
Timing time_solve(const OcpSpec& spec, const KktOptions& options = {});

double mean(const std::vector<double>& v);
double sample_sd(const std::vector<double>& v);

// ---- harness ----------------------------------------------------------------

struct ResultRow {
    std::string study;
    int p = 0;
    int r = 0;
    double dt_s = 0.0;
    double tf_s = 0.0;
    std::string metric;
    double value = 0.0;
    int rep = 0;
};

struct Series {
    std::string name;  // file stem
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

struct PlotLine {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct Plot {
    std::string name;  // file stem
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_log = false;
    std::vector<PlotLine> lines;
};

struct StudyResult {
    std::vector<ResultRow> rows;
    std::vector<Series> series;
    std::vector<Plot> plots;
    std::vector<std::pair<std::string, std::string>> summary;  // residual summary for the manifest
    std::vector<std::string> log;                               // human-readable notes
};

struct RunOptions {
    int jobs = 1;
    std::uint64_t seed = 0;  // shuffles the order of timing repetitions
};

/// Runs every study in config.study.kinds in order. Independent sweep points
/// run on up to `jobs` threads; rows are merged in parameter order. Timing
/// repetitions always run serially.
StudyResult run_studies(const RunConfig& config, const RunOptions& options = {});

/// Physical system and modal split of a config.
ModalSystem build_modal_system(const RunConfig& config, int split);

}  // namespace mrdmoc
