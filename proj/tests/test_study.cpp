#include "mrdmoc/errors.hpp"
#include "mrdmoc/study_output.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

using namespace mrdmoc;

namespace {

const char* kSpacecraft = R"([spacecraft]
hub_radius_ft = 1.0
hub_inertia_slug_ft2 = 8.0
tip_mass_slug = 0.156941
tip_inertia_slug_ft2 = 0.0018
beam_length_ft = 4.0
beam_density_slug_per_ft = 0.0271875
elastic_modulus_lb_per_ft2 = 0.1584e10
beam_height_in = 6.0
beam_thickness_in = 0.125
num_modes = 5
)";

std::string free_config(const std::string& study) {
    return std::string(kSpacecraft) + R"(
[grid]
dt_s = 1e-3
p = 2
tf_s = 0.2

[split]
r = 3

[free_response]
eta0 = 0.05, 0.001, 0.001, 0.0001, 0.0001

[study]
)" + study;
}

std::string maneuver_config(const std::string& study) {
    return std::string(kSpacecraft) + R"(
[grid]
dt_s = 1e-3
p = 2
tf_s = 0.5

[split]
r = 3

[maneuver]
theta_tf_deg = 20

[study]
)" + study;
}

std::string config_error(const std::string& text) {
    try {
        parse_config(text, "t.cfg");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

double metric(const StudyResult& r, const std::string& name, int p = -1, double dt = -1.0) {
    for (const auto& row : r.rows) {
        if (row.metric == name && (p < 0 || row.p == p) && (dt < 0.0 || row.dt_s == dt)) return row.value;
    }
    FAIL("metric " << name << " not found");
    return 0.0;
}

std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("mrdmoc_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args, const std::filesystem::path& log) {
    const std::string cmd = std::string(MRDMOC_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("config parses and renders back to the same configuration") {
    const RunConfig c = parse_config(free_config("kinds = free_response, conservation\np_list = 1, 2\n"));
    CHECK(c.grid.p == 2);
    CHECK(c.split == 3);
    CHECK(c.free_response.has_value());
    CHECK_FALSE(c.maneuver.has_value());
    REQUIRE(c.study.kinds.size() == 2);
    CHECK(c.study.kinds[1] == StudyKind::Conservation);
    CHECK(c.study.dt_list_s == std::vector<double>{1e-3});
    CHECK(c.study.p_list == std::vector<int>{1, 2});
    CHECK(c.spacecraft.flexural_rigidity == doctest::Approx(SpacecraftParams::reference().flexural_rigidity));

    const std::string rendered = render_config(c);
    const RunConfig again = parse_config(rendered);
    CHECK(render_config(again) == rendered);
    CHECK(config_hash(again) == config_hash(c));
}

TEST_CASE("manifest text is itself a valid config") {
    const RunConfig c = parse_config(maneuver_config("kinds = maneuver\n"));
    StudyResult r;
    r.summary.emplace_back("maneuver.max_primal_residual", "1e-16");
    const std::string manifest = manifest_text(c, r, {"2026-01-01T00:00:00Z", 9, 2});
    CHECK(manifest.find("config_hash = " + config_hash(c)) != std::string::npos);
    CHECK(render_config(parse_config(manifest)) == render_config(c));
}

TEST_CASE("config diagnostics carry line and field") {
    std::string text = free_config("kinds = free_response\n");
    text.replace(text.find("dt_s = 1e-3"), 11, "dt_s = fast");
    const std::string e = config_error(text);
    CHECK(e.find("t.cfg:14: grid.dt_s") != std::string::npos);
    CHECK(e.find("expected a finite number") != std::string::npos);

    CHECK(config_error(free_config("kinds =\n")).find("no study requested") != std::string::npos);
    CHECK(config_error(free_config("")).find("no study requested") != std::string::npos);
    CHECK(config_error(free_config("kinds = warp\n")).find("unknown study kind") != std::string::npos);
    CHECK(config_error(free_config("kinds = tradeoff\n")).find("needs a [maneuver]") != std::string::npos);
    CHECK(config_error(maneuver_config("kinds = conservation\n")).find("needs a [free_response]") !=
          std::string::npos);
    CHECK(config_error(free_config("kinds = free_response\ncolour = red\n")).find("study.colour: unknown key") !=
          std::string::npos);
    CHECK(config_error(free_config("kinds = free_response\np_list = ,\n")).find("must not be empty") !=
          std::string::npos);
    CHECK(config_error(free_config("kinds = free_response\n") + "[maneuver]\ntheta_tf_deg = 1\n")
              .find("exactly one of") != std::string::npos);
    CHECK(config_error(maneuver_config("kinds = tradeoff\nrepetitions = 2\n")).find("at least 3") !=
          std::string::npos);
    CHECK(config_error("[grid\n").find("t.cfg:1:") != std::string::npos);

    std::string bad_split = free_config("kinds = free_response\n");
    bad_split.replace(bad_split.find("r = 3"), 5, "r = 6");
    CHECK(config_error(bad_split).find("split.r") != std::string::npos);

    std::string bad_model = free_config("kinds = free_response\n");
    bad_model.replace(bad_model.find("tip_mass_slug = 0.156941"), 24, "tip_mass_slug = -1");
    CHECK(config_error(bad_model).find("tip_mass must be > 0") != std::string::npos);

    std::string bad_eta = free_config("kinds = free_response\n");
    bad_eta.replace(bad_eta.find("eta0 = 0.05, "), 13, "eta0 = ");
    CHECK(config_error(bad_eta).find("free_response.eta0: needs num_modes values") != std::string::npos);
}

TEST_CASE("study grids are checked for every sweep point") {
    const RunConfig ok = parse_config(free_config("kinds = convergence_integrator\ndt_list_s = 1e-3, 5e-4\n"));
    CHECK_NOTHROW(check_study_grids(ok));
    const RunConfig bad = parse_config(free_config("kinds = convergence_integrator\np_list = 1, 3\n"));
    try {
        check_study_grids(bad);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("p=3") != std::string::npos);
    }
}

TEST_CASE("order fit recovers exact power laws and honours the window") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> order(0.5, 4.0);
    std::uniform_real_distribution<double> scale(-3.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double k = order(rng);
        const double c = std::pow(10.0, scale(rng));
        std::vector<double> h;
        std::vector<double> e;
        for (int j = 0; j < 6; ++j) {
            h.push_back(1e-2 * std::pow(0.5, j));
            e.push_back(c * std::pow(h.back(), k));
        }
        // A plateau point outside the window must not matter.
        h.push_back(0.1);
        e.push_back(1e6);
        const OrderFit fit = fit_order(h, e, 0.0, 1.5e-2);
        CHECK(fit.points == 6);
        CHECK(fit.order == doctest::Approx(k).epsilon(1e-10));
    }
    const OrderFit single = fit_order({1e-3}, {1e-6}, 0.0, 0.0);
    CHECK(single.points == 1);
    CHECK(std::isnan(single.order));
    CHECK(fit_order({1e-3, 5e-4}, {0.0, 1e-6}, 0.0, 0.0).points == 1);
    CHECK_THROWS_AS(fit_order({1e-3}, {}, 0.0, 0.0), DomainError);
}

TEST_CASE("error floor detection stops where the error stalls") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> order(0.9, 3.0);
    std::uniform_int_distribution<int> where(2, 7);
    for (int trial = 0; trial < 30; ++trial) {
        const double k = order(rng);
        const int stall = where(rng);
        const double last = 1e-3 * std::pow(0.5, stall - 1);
        std::vector<std::pair<double, double>> pts;
        for (int j = 0; j < 9; ++j) {
            const double h = 1e-3 * std::pow(0.5, j);
            pts.emplace_back(h, j < stall ? std::pow(h, k) : std::pow(last, k) * (1.0 + 0.3 * (j - stall)));
        }
        // Above hi: ignored even though it breaks the halving.
        pts.emplace_back(1e-2, 0.0);
        std::shuffle(pts.begin(), pts.end(), rng);
        std::vector<double> h;
        std::vector<double> e;
        for (const auto& [x, y] : pts) {
            h.push_back(x);
            e.push_back(y);
        }
        CHECK(error_floor_limit(h, e, 1.5e-3) == doctest::Approx(last));
    }
    CHECK(error_floor_limit({1e-3, 5e-4, 2.5e-4}, {4e-6, 1e-6, 2.5e-7}, 0.0) == 0.0);
}

TEST_CASE("csv and svg writers") {
    const std::string csv = results_csv({{"maneuver", 5, 3, 1e-3, 4.5, "cost", 0.1, 0}});
    CHECK(csv == "study,param_p,param_r,dt_s,tf_s,metric,value,rep\n"
                 "maneuver,5,3,0.001,4.5,cost,0.10000000000000001,0\n");
    std::istringstream in(csv.substr(csv.find('\n') + 1));
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(in, field, ',')) fields.push_back(field);
    CHECK(std::stod(fields[6]) == 0.1);

    Plot p{"x", "Title <a&b>", "dt", "err", true, {{"line", {1e-3, 1e-2}, {1e-6, 1e-4}}}};
    const std::string svg = render_svg(p);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("Title &lt;a&amp;b&gt;") != std::string::npos);
    CHECK(svg.find("<polyline") != std::string::npos);
    p.lines[0].y = {0.0, -1.0};
    CHECK_THROWS_AS(render_svg(p), DomainError);
}

TEST_CASE("plot failures never fail the write") {
    const RunConfig c = parse_config(maneuver_config("kinds = maneuver\n"));
    StudyResult r;
    r.rows.push_back({"maneuver", 2, 3, 1e-3, 0.5, "cost", 1.0, 0});
    r.plots.push_back({"empty", "t", "x", "y", false, {}});
    const auto dir = scratch_dir("plots");
    const auto failures = write_outputs(dir, c, r, {"now", 0, 1});
    CHECK(failures.size() == 1);
    CHECK(std::filesystem::exists(dir / "results.csv"));
    CHECK(std::filesystem::exists(dir / "manifest"));
    CHECK_FALSE(std::filesystem::exists(dir / "empty.svg"));
}

TEST_CASE("integrator convergence study: values, fits and spread rows") {
    const RunConfig c = parse_config(free_config(
        "kinds = convergence_integrator\ndt_list_s = 2e-4, 1e-4, 5e-5\np_list = 1, 2\nfit_dt_max_s = 1e-3\n"));
    const StudyResult r = run_studies(c);
    CHECK(metric(r, "slow_order", 1) == doctest::Approx(2.0).epsilon(0.05));
    CHECK(metric(r, "fast_order", 2) == doctest::Approx(2.0).epsilon(0.05));
    CHECK(metric(r, "fast_error_spread_across_p", 0, 1e-4) < 0.2);

    // A single grid point gives values but no slope row.
    const StudyResult one = run_studies(parse_config(free_config("kinds = convergence_integrator\n")));
    bool has_order = false;
    for (const auto& row : one.rows) has_order = has_order || row.metric.find("_order") != std::string::npos;
    CHECK_FALSE(has_order);
    CHECK(metric(one, "slow_error") > 0.0);
}

TEST_CASE("sweeps are deterministic, independent of jobs, and rows round-trip") {
    const RunConfig c = parse_config(
        maneuver_config("kinds = convergence_ocp\ndt_list_s = 1e-3, 5e-4\np_list = 1, 2\n"));
    const StudyResult serial = run_studies(c, {1, 0});
    const StudyResult parallel = run_studies(c, {3, 0});
    REQUIRE(serial.rows.size() == parallel.rows.size());
    for (std::size_t i = 0; i < serial.rows.size(); ++i) {
        CHECK(serial.rows[i].metric == parallel.rows[i].metric);
        CHECK(serial.rows[i].p == parallel.rows[i].p);
        if (serial.rows[i].metric != "wall_s") CHECK(serial.rows[i].value == parallel.rows[i].value);
    }

    // Re-running one row's parameter tuple as its own config reproduces the metric.
    const ResultRow* probe = nullptr;
    for (const auto& row : serial.rows) {
        if (row.metric == "xi_rel_error" && row.p == 2 && row.dt_s == 5e-4) probe = &row;
    }
    REQUIRE(probe != nullptr);
    RunConfig single = c;
    single.study.dt_list_s = {probe->dt_s};
    single.study.p_list = {probe->p};
    const StudyResult again = run_studies(single);
    CHECK(std::abs(metric(again, "xi_rel_error") - probe->value) <= 1e-12 * std::abs(probe->value));
}

TEST_CASE("maneuver and conservation studies report invariants") {
    const StudyResult m = run_studies(parse_config(maneuver_config("kinds = maneuver\n")));
    CHECK(metric(m, "terminal_config_error") <= 1e-6);
    CHECK(metric(m, "terminal_momentum_max") <= 1e-6);
    CHECK(metric(m, "noether_ratio") <= 1e-8);
    CHECK(metric(m, "primal_residual") <= 1e-8);
    CHECK(metric(m, "integrator_residual") <= 1e-8);

    const StudyResult f = run_studies(parse_config(free_config("kinds = conservation\n")));
    CHECK(metric(f, "p_theta_rel_drift") <= 1e-12);
    CHECK(metric(f, "rk4_energy_monotone") == 1.0);
    CHECK(metric(f, "energy_peak_to_peak_rel") < 1e-3);
}

TEST_CASE("tradeoff study: counts match formulas and timing is serial") {
    const RunConfig c = parse_config(maneuver_config("kinds = tradeoff\np_list = 1, 2, 5\nr_list = 2, 3\nrepetitions = 3\n"));
    const StudyResult r = run_studies(c, {2, 11});
    std::map<std::string, double> seen;
    int reps = 0;
    for (const auto& row : r.rows) {
        const std::string key = std::to_string(row.p) + "/" + std::to_string(row.r) + "/";
        if (row.metric == "solve_s") ++reps;
        seen[key + row.metric] = row.value;
    }
    CHECK(reps == 3 * 3 * 2);
    for (int p : {1, 2, 5}) {
        for (int rr : {2, 3}) {
            const std::string key = std::to_string(p) + "/" + std::to_string(rr) + "/";
            CHECK(seen.at(key + "n_total_var") == seen.at(key + "formula_n_total_var"));
            CHECK(seen.at(key + "n_slow_var") == seen.at(key + "formula_n_slow_var"));
            CHECK(seen.at(key + "n_fast_var") == seen.at(key + "formula_n_fast_var"));
            CHECK(seen.at(key + "n_eq_con") == seen.at(key + "formula_n_eq_con"));
            CHECK(seen.at(key + "xi_rel_error") > 0.0);
        }
        // Moving a mode to the macro grid saves variables only when that grid is coarser.
        const double r3 = seen.at(std::to_string(p) + "/3/n_total_var");
        const double r2 = seen.at(std::to_string(p) + "/2/n_total_var");
        if (p == 1) {
            CHECK(r3 == r2);
        } else {
            CHECK(r3 < r2);
        }
    }
}

TEST_CASE("cli exit codes and artifacts") {
    const auto dir = scratch_dir("cli");
    const auto log = dir / "log.txt";
    auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream(dir / name) << text;
        return (dir / name).string();
    };

    const std::string good = write("good.cfg", maneuver_config("kinds = maneuver\n"));
    CHECK(run_cli("validate --config " + good, log) == 0);
    CHECK(run_cli("run --config " + good + " --out " + (dir / "out").string(), log) == 0);
    CHECK(std::filesystem::exists(dir / "out" / "results.csv"));
    CHECK(std::filesystem::exists(dir / "out" / "maneuver_control.csv"));
    CHECK(std::filesystem::exists(dir / "out" / "maneuver_theta.svg"));
    CHECK(slurp(dir / "out" / "results.csv").rfind("study,param_p,param_r,dt_s,tf_s,metric,value,rep\n", 0) == 0);

    // The manifest reruns to the same numbers.
    CHECK(run_cli("run --config " + (dir / "out" / "manifest").string() + " --out " + (dir / "again").string(),
                  log) == 0);
    auto numeric = [&](const std::filesystem::path& p) {
        std::istringstream in(slurp(p));
        std::string line;
        std::string kept;
        while (std::getline(in, line)) {
            if (line.find(",wall_s,") == std::string::npos) kept += line + "\n";
        }
        return kept;
    };
    CHECK(numeric(dir / "out" / "results.csv") == numeric(dir / "again" / "results.csv"));

    const std::string empty = write("empty.cfg", maneuver_config("kinds =\n"));
    CHECK(run_cli("run --config " + empty, log) == 2);
    CHECK(slurp(log).find("no study requested") != std::string::npos);
    CHECK(run_cli("validate --config " + empty, log) == 2);

    const std::string bad_grid = write("grid.cfg", maneuver_config("kinds = convergence_ocp\np_list = 3\n"));
    CHECK(run_cli("validate --config " + bad_grid, log) == 2);
    CHECK(run_cli("run --config " + (dir / "missing.cfg").string(), log) == 2);
    CHECK(run_cli("run", log) == 2);

    // A 0.01 s slew is beyond the reference's conditioning limit: numeric failure.
    std::string hard = maneuver_config("kinds = convergence_ocp\n");
    hard.replace(hard.find("tf_s = 0.5"), 10, "tf_s = 0.01");
    const std::string numeric_cfg = write("numeric.cfg", hard);
    CHECK(run_cli("run --config " + numeric_cfg + " --out " + (dir / "n").string(), log) == 3);
    CHECK(slurp(log).find("numeric error: reference_oracles") != std::string::npos);
}
