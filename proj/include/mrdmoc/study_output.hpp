#pragma once

/**
 * @file study_output.hpp
 * @brief results.csv, per-study series CSVs, SVG line charts and the manifest.
 */

#include "mrdmoc/studies.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace mrdmoc {

inline constexpr const char* kToolkitVersion = "1.0.0";

/// CRC-32 of the normalized config text, as 8 hex digits.
std::string config_hash(const RunConfig& config);

/// Tidy rows under `study,param_p,param_r,dt_s,tf_s,metric,value,rep`, values as %.17g.
std::string results_csv(const std::vector<ResultRow>& rows);
std::string series_csv(const Series& series);

/// Static SVG line chart. Non-positive values are dropped on log axes.
/// Throws DomainError when nothing is left to draw.
std::string render_svg(const Plot& plot);

struct ManifestInfo {
    std::string timestamp;  // ISO 8601 UTC
    std::uint64_t seed = 0;
    int jobs = 1;
};

/// [manifest] block followed by the normalized config; readable by parse_config.
std::string manifest_text(const RunConfig& config, const StudyResult& result, const ManifestInfo& info);

/// Writes everything under dir. CSV and manifest failures throw; plot failures
/// are reported in the returned list and never throw.
std::vector<std::string> write_outputs(const std::filesystem::path& dir, const RunConfig& config,
                                       const StudyResult& result, const ManifestInfo& info);

}  // namespace mrdmoc
