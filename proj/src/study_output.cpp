#include "mrdmoc/study_output.hpp"

#include "mrdmoc/errors.hpp"

#include <boost/crc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mrdmoc {

namespace {

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char ch : s) {
        switch (ch) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += ch;
        }
    }
    return out;
}

// Tick positions: decades on log axes, about five round steps otherwise.
std::vector<double> ticks(double lo, double hi, bool log) {
    std::vector<double> t;
    if (log) {
        for (double e = std::ceil(lo - 1e-9); e <= hi + 1e-9; e += 1.0) t.push_back(e);
        return t;
    }
    const double raw = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (raw <= m * mag) {
            step = m * mag;
            break;
        }
    }
    for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) t.push_back(v);
    return t;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    out.close();
    if (!out) throw std::runtime_error("study_output: cannot write " + path.string());
}

}  // namespace

std::string config_hash(const RunConfig& config) {
    const std::string text = render_config(config);
    boost::crc_32_type crc;
    crc.process_bytes(text.data(), text.size());
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(crc.checksum()));
    return buf;
}

std::string results_csv(const std::vector<ResultRow>& rows) {
    std::ostringstream out;
    out << "study,param_p,param_r,dt_s,tf_s,metric,value,rep\n";
    for (const ResultRow& r : rows) {
        out << r.study << ',' << r.p << ',' << r.r << ',' << g17(r.dt_s) << ',' << g17(r.tf_s) << ',' << r.metric
            << ',' << g17(r.value) << ',' << r.rep << '\n';
    }
    return out.str();
}

std::string series_csv(const Series& series) {
    std::ostringstream out;
    for (std::size_t i = 0; i < series.columns.size(); ++i) out << (i ? "," : "") << series.columns[i];
    out << '\n';
    for (const auto& row : series.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << g17(row[i]);
        out << '\n';
    }
    return out.str();
}

std::string render_svg(const Plot& plot) {
    constexpr double W = 720, H = 450, L = 80, R = 170, T = 40, B = 60;
    auto map_value = [&](double v, bool log) { return log ? std::log10(v) : v; };

    struct Drawn {
        std::string label;
        std::vector<std::pair<double, double>> pts;
    };
    std::vector<Drawn> lines;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    for (const PlotLine& line : plot.lines) {
        Drawn d{line.label, {}};
        for (std::size_t i = 0; i < std::min(line.x.size(), line.y.size()); ++i) {
            const double x = line.x[i];
            const double y = line.y[i];
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            if (plot.log_log && (x <= 0.0 || y <= 0.0)) continue;
            d.pts.emplace_back(map_value(x, plot.log_log), map_value(y, plot.log_log));
            x0 = std::min(x0, d.pts.back().first);
            x1 = std::max(x1, d.pts.back().first);
            y0 = std::min(y0, d.pts.back().second);
            y1 = std::max(y1, d.pts.back().second);
        }
        if (!d.pts.empty()) lines.push_back(std::move(d));
    }
    if (lines.empty()) throw DomainError("study_output: plot '" + plot.name + "' has no drawable points");
    if (x1 - x0 <= 0.0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if (y1 - y0 <= 0.0) {
        const double pad = y0 != 0.0 ? 0.05 * std::abs(y0) : 0.5;
        y0 -= pad;
        y1 += pad;
    }
    const double pad = 0.04 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(plot.title)
      << "</text>\n"
      << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double t : ticks(x0, x1, plot.log_log)) {
        const std::string label = plot.log_log ? "1e" + short_num(t) : short_num(t);
        s << "<line x1=\"" << px(t) << "\" y1=\"" << H - B << "\" x2=\"" << px(t) << "\" y2=\"" << H - B + 5
          << "\" stroke=\"black\"/><text x=\"" << px(t) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">"
          << label << "</text>\n";
    }
    for (double t : ticks(y0, y1, plot.log_log)) {
        const std::string label = plot.log_log ? "1e" + short_num(t) : short_num(t);
        s << "<line x1=\"" << L - 5 << "\" y1=\"" << py(t) << "\" x2=\"" << L << "\" y2=\"" << py(t)
          << "\" stroke=\"black\"/><text x=\"" << L - 8 << "\" y=\"" << py(t) + 4 << "\" text-anchor=\"end\">"
          << label << "</text>\n";
    }
    s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">"
      << xml_escape(plot.x_label) << "</text>\n"
      << "<text transform=\"translate(18," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << xml_escape(plot.y_label) << "</text>\n";
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const char* color = palette[i % 10];
        s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : lines[i].pts) s << px(x) << ',' << py(y) << ' ';
        s << "\"/>\n";
        if (plot.log_log) {
            for (const auto& [x, y] : lines[i].pts) {
                s << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
            }
        }
        const double ly = T + 14 + 16 * static_cast<double>(i);
        s << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly - 4
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << W - R + 35 << "\" y=\"" << ly << "\">"
          << xml_escape(lines[i].label) << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string manifest_text(const RunConfig& config, const StudyResult& result, const ManifestInfo& info) {
    std::ostringstream out;
    out << "[manifest]\n"
        << "toolkit_version = " << kToolkitVersion << "\n"
        << "timestamp = " << info.timestamp << "\n"
        << "config_hash = " << config_hash(config) << "\n"
        << "seed = " << info.seed << "\n"
        << "jobs = " << info.jobs << "\n"
        << "rows = " << result.rows.size() << "\n";
    for (const auto& [key, value] : result.summary) out << key << " = " << value << "\n";
    out << "\n" << render_config(config);
    return out.str();
}

std::vector<std::string> write_outputs(const std::filesystem::path& dir, const RunConfig& config,
                                       const StudyResult& result, const ManifestInfo& info) {
    std::filesystem::create_directories(dir);
    write_file(dir / "results.csv", results_csv(result.rows));
    for (const Series& s : result.series) write_file(dir / (s.name + ".csv"), series_csv(s));
    write_file(dir / "manifest", manifest_text(config, result, info));
    std::vector<std::string> plot_failures;
    if (!config.output.wants("svg")) return plot_failures;
    for (const Plot& p : result.plots) {
        try {
            write_file(dir / (p.name + ".svg"), render_svg(p));
        } catch (const std::exception& e) {
            plot_failures.push_back(p.name + ": " + e.what());
        }
    }
    return plot_failures;
}

}  // namespace mrdmoc
