#include "mrdmoc/study_config.hpp"

#include "mrdmoc/errors.hpp"
#include "mrdmoc/multirate_integrator.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mrdmoc {

namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys{
        {"spacecraft",
         {"hub_radius_ft", "hub_inertia_slug_ft2", "tip_mass_slug", "tip_inertia_slug_ft2", "beam_length_ft",
          "beam_density_slug_per_ft", "elastic_modulus_lb_per_ft2", "beam_height_in", "beam_thickness_in",
          "num_modes"}},
        {"grid", {"dt_s", "p", "tf_s"}},
        {"split", {"r"}},
        {"maneuver", {"theta_tf_deg", "xi_start", "xi_end"}},
        {"free_response", {"eta0", "theta0_rad", "rates"}},
        {"study",
         {"kinds", "dt_list_s", "p_list", "r_list", "refinement", "repetitions", "fit_dt_min_s", "fit_dt_max_s",
          "series_points"}},
        {"output", {"directory", "formats"}},
    };
    return keys;
}

// Reads the config once and keeps line numbers of every section.key for diagnostics.
class Reader {
public:
    Reader(const std::string& text, std::string source) : source_(std::move(source)) {
        std::istringstream in(text);
        try {
            pt::ini_parser::read_ini(in, tree_);
        } catch (const pt::ini_parser_error& e) {
            throw ConfigError(source_ + ":" + std::to_string(e.line()) + ": " + e.message());
        }
        std::istringstream lines(text);
        std::string line;
        std::string section;
        int number = 0;
        while (std::getline(lines, line)) {
            ++number;
            std::string s = boost::trim_copy(line);
            if (s.empty() || s[0] == ';' || s[0] == '#') continue;
            if (s.front() == '[' && s.back() == ']') {
                section = boost::trim_copy(s.substr(1, s.size() - 2));
                section_lines_.emplace(section, number);
                continue;
            }
            const auto eq = s.find('=');
            if (eq != std::string::npos) lines_[section + "." + boost::trim_copy(s.substr(0, eq))] = number;
        }
        for (const auto& [section_name, body] : tree_) {
            if (section_name == "manifest") continue;
            const auto known = known_keys().find(section_name);
            if (known == known_keys().end()) fail(section_name, "unknown section", section_lines_[section_name]);
            for (const auto& [key, value] : body) {
                if (!known->second.count(key)) fail(section_name + "." + key, "unknown key");
            }
        }
    }

    bool has_section(const std::string& s) const { return tree_.find(s) != tree_.not_found(); }
    bool has(const std::string& path) const { return static_cast<bool>(tree_.get_optional<std::string>(path)); }

    [[noreturn]] void fail(const std::string& path, const std::string& message, int line = 0) const {
        if (line == 0) {
            const auto it = lines_.find(path);
            if (it != lines_.end()) line = it->second;
        }
        std::string where = source_;
        if (line > 0) where += ":" + std::to_string(line);
        throw ConfigError(where + ": " + path + ": " + message);
    }

    std::string text(const std::string& path) const {
        const auto v = tree_.get_optional<std::string>(path);
        if (!v) fail(path, "missing required key");
        return boost::trim_copy(*v);
    }

    double number(const std::string& path) const { return to_double(path, text(path)); }
    double number(const std::string& path, double fallback) const { return has(path) ? number(path) : fallback; }
    int integer(const std::string& path) const { return to_int(path, text(path)); }
    int integer(const std::string& path, int fallback) const { return has(path) ? integer(path) : fallback; }

    std::vector<std::string> list(const std::string& path) const {
        std::vector<std::string> items;
        const std::string raw = text(path);
        boost::split(items, raw, boost::is_any_of(", \t"), boost::token_compress_on);
        items.erase(std::remove_if(items.begin(), items.end(), [](const std::string& s) { return s.empty(); }),
                    items.end());
        return items;
    }
    std::vector<double> numbers(const std::string& path) const {
        std::vector<double> out;
        for (const auto& s : list(path)) out.push_back(to_double(path, s));
        if (out.empty()) fail(path, "list must not be empty");
        return out;
    }
    std::vector<int> integers(const std::string& path) const {
        std::vector<int> out;
        for (const auto& s : list(path)) out.push_back(to_int(path, s));
        if (out.empty()) fail(path, "list must not be empty");
        return out;
    }
    Eigen::VectorXd vector(const std::string& path) const {
        const std::vector<double> v = numbers(path);
        return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
    }

private:
    double to_double(const std::string& path, const std::string& s) const {
        double v = 0.0;
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v)) {
            fail(path, "expected a finite number, got '" + s + "'");
        }
        return v;
    }
    int to_int(const std::string& path, const std::string& s) const {
        int v = 0;
        const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || end != s.data() + s.size()) fail(path, "expected an integer, got '" + s + "'");
        return v;
    }

    std::string source_;
    pt::ptree tree_;
    std::map<std::string, int> lines_;
    std::map<std::string, int> section_lines_;
};

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class Range>
std::string join_numbers(const Range& values) {
    std::string out;
    for (const auto& v : values) {
        if (!out.empty()) out += ", ";
        if constexpr (std::is_integral_v<std::decay_t<decltype(v)>>) {
            out += std::to_string(v);
        } else {
            out += format_number(v);
        }
    }
    return out;
}

}  // namespace

const char* study_name(StudyKind kind) {
    switch (kind) {
        case StudyKind::FreeResponse: return "free_response";
        case StudyKind::Conservation: return "conservation";
        case StudyKind::ConvergenceIntegrator: return "convergence_integrator";
        case StudyKind::ConvergenceOcp: return "convergence_ocp";
        case StudyKind::Tradeoff: return "tradeoff";
        case StudyKind::Maneuver: return "maneuver";
    }
    return "?";
}

StudyKind parse_study_kind(const std::string& name) {
    for (StudyKind k : {StudyKind::FreeResponse, StudyKind::Conservation, StudyKind::ConvergenceIntegrator,
                        StudyKind::ConvergenceOcp, StudyKind::Tradeoff, StudyKind::Maneuver}) {
        if (name == study_name(k)) return k;
    }
    throw ConfigError("unknown study kind '" + name + "'");
}

bool needs_maneuver(StudyKind kind) {
    return kind == StudyKind::ConvergenceOcp || kind == StudyKind::Tradeoff || kind == StudyKind::Maneuver;
}

Eigen::VectorXd FreeResponseSection::initial_config() const {
    Eigen::VectorXd xi(eta0.size() + 1);
    xi << theta0_rad, eta0;
    return xi;
}

Eigen::VectorXd FreeResponseSection::initial_rates() const {
    return xi_dot0.size() ? xi_dot0 : Eigen::VectorXd::Zero(eta0.size() + 1);
}

bool OutputSection::wants(const std::string& format) const {
    return std::find(formats.begin(), formats.end(), format) != formats.end();
}

RunConfig parse_config(const std::string& text, const std::string& source) {
    const Reader in(text, source);
    RunConfig c;

    SpacecraftParams& sc = c.spacecraft;
    sc.hub_radius = in.number("spacecraft.hub_radius_ft", sc.hub_radius);
    sc.hub_inertia = in.number("spacecraft.hub_inertia_slug_ft2", sc.hub_inertia);
    sc.tip_mass = in.number("spacecraft.tip_mass_slug", sc.tip_mass);
    sc.tip_inertia = in.number("spacecraft.tip_inertia_slug_ft2", sc.tip_inertia);
    sc.beam_length = in.number("spacecraft.beam_length_ft", sc.beam_length);
    sc.beam_linear_density = in.number("spacecraft.beam_density_slug_per_ft", sc.beam_linear_density);
    sc.num_modes = in.integer("spacecraft.num_modes", sc.num_modes);
    c.elastic_modulus_lb_per_ft2 = in.number("spacecraft.elastic_modulus_lb_per_ft2", c.elastic_modulus_lb_per_ft2);
    c.beam_height_in = in.number("spacecraft.beam_height_in", c.beam_height_in);
    c.beam_thickness_in = in.number("spacecraft.beam_thickness_in", c.beam_thickness_in);
    sc.flexural_rigidity =
        rectangular_flexural_rigidity(c.elastic_modulus_lb_per_ft2, c.beam_height_in, c.beam_thickness_in);
    try {
        sc.validate();
    } catch (const ModelError& e) {
        in.fail("spacecraft", e.what());
    }
    const int n_modes = sc.num_modes;

    c.grid.dt_s = in.number("grid.dt_s");
    c.grid.p = in.integer("grid.p");
    c.grid.tf_s = in.number("grid.tf_s");
    if (!(c.grid.dt_s > 0.0)) in.fail("grid.dt_s", "must be > 0");
    if (c.grid.p < 1) in.fail("grid.p", "must be >= 1");
    if (!(c.grid.tf_s > 0.0)) in.fail("grid.tf_s", "must be > 0");

    c.split = in.integer("split.r");
    if (c.split < 1 || c.split > n_modes) in.fail("split.r", "must lie in [1, num_modes]");

    const bool has_maneuver = in.has_section("maneuver");
    const bool has_free = in.has_section("free_response");
    if (has_maneuver == has_free) {
        in.fail("maneuver/free_response", "exactly one of [maneuver] or [free_response] is required");
    }
    if (has_maneuver) {
        ManeuverSection m;
        m.theta_tf_deg = in.number("maneuver.theta_tf_deg");
        if (in.has("maneuver.xi_start") != in.has("maneuver.xi_end")) {
            in.fail(in.has("maneuver.xi_start") ? "maneuver.xi_start" : "maneuver.xi_end",
                    "xi_start and xi_end must be given together");
        }
        if (in.has("maneuver.xi_start")) {
            m.xi_start = in.vector("maneuver.xi_start");
            m.xi_end = in.vector("maneuver.xi_end");
            if (m.xi_start.size() != n_modes + 1) in.fail("maneuver.xi_start", "needs num_modes + 1 values");
            if (m.xi_end.size() != n_modes + 1) in.fail("maneuver.xi_end", "needs num_modes + 1 values");
        }
        c.maneuver = m;
    } else {
        FreeResponseSection f;
        f.eta0 = in.vector("free_response.eta0");
        if (f.eta0.size() != n_modes) in.fail("free_response.eta0", "needs num_modes values");
        f.theta0_rad = in.number("free_response.theta0_rad", 0.0);
        if (in.has("free_response.rates")) {
            f.xi_dot0 = in.vector("free_response.rates");
            if (f.xi_dot0.size() != n_modes + 1) in.fail("free_response.rates", "needs num_modes + 1 values");
        }
        c.free_response = f;
    }

    StudySection& s = c.study;
    if (!in.has_section("study") || !in.has("study.kinds")) in.fail("study.kinds", "no study requested");
    for (const auto& name : in.list("study.kinds")) {
        try {
            s.kinds.push_back(parse_study_kind(name));
        } catch (const ConfigError& e) {
            in.fail("study.kinds", e.what());
        }
    }
    if (s.kinds.empty()) in.fail("study.kinds", "no study requested");
    for (StudyKind k : s.kinds) {
        if (needs_maneuver(k) && !has_maneuver) {
            in.fail("study.kinds", std::string(study_name(k)) + " needs a [maneuver] section");
        }
        if (!needs_maneuver(k) && !has_free) {
            in.fail("study.kinds", std::string(study_name(k)) + " needs a [free_response] section");
        }
    }
    s.dt_list_s = in.has("study.dt_list_s") ? in.numbers("study.dt_list_s") : std::vector<double>{c.grid.dt_s};
    s.p_list = in.has("study.p_list") ? in.integers("study.p_list") : std::vector<int>{c.grid.p};
    s.r_list = in.has("study.r_list") ? in.integers("study.r_list") : std::vector<int>{c.split};
    for (double dt : s.dt_list_s) {
        if (!(dt > 0.0)) in.fail("study.dt_list_s", "entries must be > 0");
    }
    for (int p : s.p_list) {
        if (p < 1) in.fail("study.p_list", "entries must be >= 1");
    }
    for (int r : s.r_list) {
        if (r < 1 || r > n_modes) in.fail("study.r_list", "entries must lie in [1, num_modes]");
    }
    s.refinement = in.integer("study.refinement", s.refinement);
    s.repetitions = in.integer("study.repetitions", s.repetitions);
    s.fit_dt_min_s = in.number("study.fit_dt_min_s", s.fit_dt_min_s);
    s.fit_dt_max_s = in.number("study.fit_dt_max_s", s.fit_dt_max_s);
    s.series_points = in.integer("study.series_points", s.series_points);
    if (s.refinement < 1) in.fail("study.refinement", "must be >= 1");
    if (s.repetitions < 1) in.fail("study.repetitions", "must be >= 1");
    if (s.fit_dt_min_s < 0.0) in.fail("study.fit_dt_min_s", "must be >= 0");
    if (s.fit_dt_max_s < 0.0) in.fail("study.fit_dt_max_s", "must be >= 0");
    if (s.fit_dt_max_s > 0.0 && s.fit_dt_min_s > s.fit_dt_max_s) {
        in.fail("study.fit_dt_min_s", "must not exceed fit_dt_max_s");
    }
    if (s.series_points < 2) in.fail("study.series_points", "must be >= 2");
    const bool timed = std::find(s.kinds.begin(), s.kinds.end(), StudyKind::Tradeoff) != s.kinds.end();
    if (timed && s.repetitions < 3) in.fail("study.repetitions", "timing needs at least 3 repetitions");

    if (in.has("output.directory")) c.output.directory = in.text("output.directory");
    if (c.output.directory.empty()) in.fail("output.directory", "must not be empty");
    if (in.has("output.formats")) {
        c.output.formats = in.list("output.formats");
        for (const auto& f : c.output.formats) {
            if (f != "csv" && f != "svg") in.fail("output.formats", "unknown format '" + f + "' (csv, svg)");
        }
        if (!c.output.wants("csv")) in.fail("output.formats", "csv is always written and must be listed");
    }
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), path);
}

std::string render_config(const RunConfig& c) {
    std::ostringstream out;
    const SpacecraftParams& sc = c.spacecraft;
    out << "[spacecraft]\n"
        << "hub_radius_ft = " << format_number(sc.hub_radius) << "\n"
        << "hub_inertia_slug_ft2 = " << format_number(sc.hub_inertia) << "\n"
        << "tip_mass_slug = " << format_number(sc.tip_mass) << "\n"
        << "tip_inertia_slug_ft2 = " << format_number(sc.tip_inertia) << "\n"
        << "beam_length_ft = " << format_number(sc.beam_length) << "\n"
        << "beam_density_slug_per_ft = " << format_number(sc.beam_linear_density) << "\n"
        << "elastic_modulus_lb_per_ft2 = " << format_number(c.elastic_modulus_lb_per_ft2) << "\n"
        << "beam_height_in = " << format_number(c.beam_height_in) << "\n"
        << "beam_thickness_in = " << format_number(c.beam_thickness_in) << "\n"
        << "num_modes = " << sc.num_modes << "\n\n";
    out << "[grid]\n"
        << "dt_s = " << format_number(c.grid.dt_s) << "\n"
        << "p = " << c.grid.p << "\n"
        << "tf_s = " << format_number(c.grid.tf_s) << "\n\n";
    out << "[split]\nr = " << c.split << "\n\n";
    if (c.maneuver) {
        out << "[maneuver]\ntheta_tf_deg = " << format_number(c.maneuver->theta_tf_deg) << "\n";
        if (c.maneuver->xi_start.size()) {
            out << "xi_start = " << join_numbers(c.maneuver->xi_start) << "\n"
                << "xi_end = " << join_numbers(c.maneuver->xi_end) << "\n";
        }
        out << "\n";
    }
    if (c.free_response) {
        out << "[free_response]\n"
            << "eta0 = " << join_numbers(c.free_response->eta0) << "\n"
            << "theta0_rad = " << format_number(c.free_response->theta0_rad) << "\n";
        if (c.free_response->xi_dot0.size()) out << "rates = " << join_numbers(c.free_response->xi_dot0) << "\n";
        out << "\n";
    }
    const StudySection& s = c.study;
    std::string kinds;
    for (StudyKind k : s.kinds) kinds += (kinds.empty() ? "" : ", ") + std::string(study_name(k));
    out << "[study]\n"
        << "kinds = " << kinds << "\n"
        << "dt_list_s = " << join_numbers(s.dt_list_s) << "\n"
        << "p_list = " << join_numbers(s.p_list) << "\n"
        << "r_list = " << join_numbers(s.r_list) << "\n"
        << "refinement = " << s.refinement << "\n"
        << "repetitions = " << s.repetitions << "\n"
        << "fit_dt_min_s = " << format_number(s.fit_dt_min_s) << "\n"
        << "fit_dt_max_s = " << format_number(s.fit_dt_max_s) << "\n"
        << "series_points = " << s.series_points << "\n\n";
    std::string formats;
    for (const auto& f : c.output.formats) formats += (formats.empty() ? "" : ", ") + f;
    out << "[output]\n"
        << "directory = " << c.output.directory << "\n"
        << "formats = " << formats << "\n";
    return out.str();
}

void check_study_grids(const RunConfig& c) {
    auto check = [&](const char* study, double dt, int p) {
        try {
            (void)MultirateGrid::from_micro_step(0.0, c.grid.tf_s, dt, p);
        } catch (const ConfigError& e) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%s: sweep point dt_s=%.6g p=%d tf_s=%.6g: ", study, dt, p, c.grid.tf_s);
            throw ConfigError(buf + std::string(e.what()));
        }
    };
    for (StudyKind k : c.study.kinds) {
        switch (k) {
            case StudyKind::FreeResponse:
            case StudyKind::Conservation:
            case StudyKind::Maneuver:
                check(study_name(k), c.grid.dt_s, c.grid.p);
                break;
            case StudyKind::ConvergenceIntegrator:
            case StudyKind::ConvergenceOcp:
                for (double dt : c.study.dt_list_s) {
                    for (int p : c.study.p_list) check(study_name(k), dt, p);
                }
                break;
            case StudyKind::Tradeoff:
                for (int p : c.study.p_list) check(study_name(k), c.grid.dt_s, p);
                check("tradeoff reference", c.grid.dt_s / c.study.refinement, 1);
                break;
        }
    }
}

}  // namespace mrdmoc
