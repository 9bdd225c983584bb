#pragma once

/**
 * @file study_config.hpp
 * @brief INI run configuration for the study harness.
 *
 * Sections: [spacecraft], [grid], [split], exactly one of [maneuver] or
 * [free_response], [study] and [output]. Units are part of every key name.
 * A [manifest] section, if present, is ignored so that a written manifest
 * can be fed back as a config.
 */

#include "mrdmoc/beam_model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace mrdmoc {

enum class StudyKind { FreeResponse, Conservation, ConvergenceIntegrator, ConvergenceOcp, Tradeoff, Maneuver };

const char* study_name(StudyKind kind);
/// Throws ConfigError for an unknown name.
StudyKind parse_study_kind(const std::string& name);
/// Integrator studies need [free_response]; the others need [maneuver].
bool needs_maneuver(StudyKind kind);

struct GridSection {
    double dt_s = 1e-3;
    int p = 1;
    double tf_s = 1.0;
};

struct ManeuverSection {
    double theta_tf_deg = 20.0;
    // Optional physical boundary configurations; empty means rest-to-rest
    // from zero to theta_tf with a quiescent appendage.
    Eigen::VectorXd xi_start;
    Eigen::VectorXd xi_end;
};

struct FreeResponseSection {
    Eigen::VectorXd eta0;        // N appendage amplitudes
    double theta0_rad = 0.0;
    Eigen::VectorXd xi_dot0;     // N+1 rates; empty means zero

    Eigen::VectorXd initial_config() const;
    Eigen::VectorXd initial_rates() const;
};

struct StudySection {
    std::vector<StudyKind> kinds;
    std::vector<double> dt_list_s;  // defaults to {grid.dt_s}
    std::vector<int> p_list;        // defaults to {grid.p}
    std::vector<int> r_list;        // defaults to {split.r}
    int refinement = 16;            // fine single-rate reference, dt / refinement
    int repetitions = 5;            // timing repetitions
    // Convergence fit window; 0 picks dt <= 0.2 / omega_max and no lower bound.
    double fit_dt_min_s = 0.0;
    double fit_dt_max_s = 0.0;
    int series_points = 2000;       // cap on rows per time-series CSV
};

struct OutputSection {
    std::string directory = "mrdmoc_out";
    std::vector<std::string> formats{"csv", "svg"};

    bool wants(const std::string& format) const;
};

struct RunConfig {
    SpacecraftParams spacecraft;
    // Kept alongside the derived flexural rigidity for the config echo.
    double elastic_modulus_lb_per_ft2 = 0.1584e10;
    double beam_height_in = 6.0;
    double beam_thickness_in = 0.125;
    GridSection grid;
    int split = 1;
    std::optional<ManeuverSection> maneuver;
    std::optional<FreeResponseSection> free_response;
    StudySection study;
    OutputSection output;
};

/// Parses and validates. Errors read "<source>:<line>: <section.key>: <message>".
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);

/// Normalized INI text that parses back to the same configuration.
std::string render_config(const RunConfig& config);

/// Checks that every grid the requested studies will build is admissible.
/// Throws ConfigError naming the offending sweep point.
void check_study_grids(const RunConfig& config);

}  // namespace mrdmoc
