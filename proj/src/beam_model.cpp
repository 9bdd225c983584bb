#include "mrdmoc/beam_model.hpp"

#include "mrdmoc/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace mrdmoc {

namespace {

constexpr double kInchesPerFoot = 12.0;
constexpr int kBaseQuadratureOrder = 32;
constexpr int kMaxQuadratureOrder = 256;
constexpr double kQuadratureRelTol = 1e-12;

bool entries_agree(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const double floor = 1e-3 * std::max(a.cwiseAbs().maxCoeff(), 1e-300);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            const double scale = std::max(std::abs(a(i, j)), floor);
            if (std::abs(a(i, j) - b(i, j)) > kQuadratureRelTol * scale) return false;
        }
    }
    return true;
}

}  // namespace

void SpacecraftParams::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw ModelError(std::string("beam_model: ") + what);
    };
    require(hub_radius > 0.0, "hub_radius must be > 0");
    require(hub_inertia >= 0.0, "hub_inertia must be >= 0");
    require(tip_mass > 0.0, "tip_mass must be > 0");
    require(tip_inertia >= 0.0, "tip_inertia must be >= 0");
    require(beam_length > 0.0, "beam_length must be > 0");
    require(beam_linear_density > 0.0, "beam_linear_density must be > 0");
    require(flexural_rigidity > 0.0, "flexural_rigidity must be > 0");
    require(num_modes >= 1, "num_modes must be >= 1");
}

SpacecraftParams SpacecraftParams::reference() {
    SpacecraftParams p;
    p.flexural_rigidity = rectangular_flexural_rigidity(0.1584e10, 6.0, 0.125);
    return p;
}

double rectangular_flexural_rigidity(double elastic_modulus_lb_ft2, double height_in,
                                     double thickness_in) {
    const double h = height_in / kInchesPerFoot;
    const double t = thickness_in / kInchesPerFoot;
    return elastic_modulus_lb_ft2 * h * t * t * t / 12.0;
}

ModeBasis::ModeBasis(double length, int num_modes) : length_(length), num_modes_(num_modes) {
    if (!(length > 0.0)) throw DomainError("beam_model: basis length must be > 0");
    if (num_modes < 1) throw DomainError("beam_model: basis needs at least one mode");
}

double ModeBasis::eval(int j, double x, int deriv) const {
    if (j < 1 || j > num_modes_) {
        throw DomainError("beam_model: mode index " + std::to_string(j) + " outside [1, " +
                          std::to_string(num_modes_) + "]");
    }
    if (!(x >= 0.0 && x <= length_)) {
        throw DomainError("beam_model: position " + std::to_string(x) + " outside [0, L]");
    }
    const double a = j * std::numbers::pi / length_;
    const double sign = (j % 2 == 1) ? 1.0 : -1.0;  // (-1)^(j+1)
    switch (deriv) {
        case 0: return 1.0 - std::cos(a * x) + 0.5 * sign * (a * x) * (a * x);
        case 1: return a * std::sin(a * x) + sign * a * a * x;
        case 2: return a * a * std::cos(a * x) + sign * a * a;
        default: throw DomainError("beam_model: derivative order must be 0, 1 or 2");
    }
}

double eval_mode_shape(const ModeBasis& basis, int j, double x, int deriv) {
    return basis.eval(j, x, deriv);
}

QuadratureRule gauss_legendre(int order, double a, double b) {
    if (order < 1) throw DomainError("beam_model: quadrature order must be >= 1");
    QuadratureRule rule;
    rule.nodes.resize(order);
    rule.weights.resize(order);
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (b + a);
    // Newton on P_n starting from the Chebyshev-like guess; roots are symmetric.
    for (int i = 0; i < (order + 1) / 2; ++i) {
        double z = std::cos(std::numbers::pi * (i + 0.75) / (order + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = 0.0;
            for (int k = 1; k <= order; ++k) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = order * (z * p0 - p1) / (z * z - 1.0);
            const double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        const double w = 2.0 / ((1.0 - z * z) * dp * dp);
        rule.nodes[i] = mid - half * z;
        rule.nodes[order - 1 - i] = mid + half * z;
        rule.weights[i] = half * w;
        rule.weights[order - 1 - i] = half * w;
    }
    return rule;
}

SystemMatrices assemble_system_with_order(const SpacecraftParams& params, int quadrature_order) {
    params.validate();
    const int n = params.num_modes;
    const double len = params.beam_length;
    const double rho_a = params.beam_linear_density;
    const double arm = params.hub_radius + len;
    const ModeBasis basis(len, n);
    const QuadratureRule rule = gauss_legendre(quadrature_order, 0.0, len);

    // Tabulate the basis once at the quadrature nodes.
    const auto nq = static_cast<Eigen::Index>(rule.nodes.size());
    Eigen::MatrixXd phi(n, nq);
    Eigen::MatrixXd phi_dd(n, nq);
    for (int j = 1; j <= n; ++j) {
        for (Eigen::Index q = 0; q < nq; ++q) {
            phi(j - 1, q) = basis.eval(j, rule.nodes[q], 0);
            phi_dd(j - 1, q) = basis.eval(j, rule.nodes[q], 2);
        }
    }
    Eigen::VectorXd tip(n);
    Eigen::VectorXd tip_slope(n);
    for (int j = 1; j <= n; ++j) {
        tip(j - 1) = basis.eval(j, len, 0);
        tip_slope(j - 1) = basis.eval(j, len, 1);
    }

    SystemMatrices sys;
    sys.mass = Eigen::MatrixXd::Zero(n + 1, n + 1);
    sys.stiffness = Eigen::MatrixXd::Zero(n + 1, n + 1);
    sys.input = Eigen::VectorXd::Zero(n + 1);
    sys.input(0) = 1.0;

    double hub_integral = 0.0;
    for (Eigen::Index q = 0; q < nq; ++q) {
        const double r = params.hub_radius + rule.nodes[q];
        hub_integral += rule.weights[q] * rho_a * r * r;
    }
    sys.mass(0, 0) = params.hub_inertia +
                     2.0 * (params.tip_inertia + params.tip_mass * arm * arm + hub_integral);

    for (int i = 0; i < n; ++i) {
        double coupling = 0.0;
        for (Eigen::Index q = 0; q < nq; ++q) {
            coupling += rule.weights[q] * rho_a * (params.hub_radius + rule.nodes[q]) * phi(i, q);
        }
        const double m_theta_eta = 2.0 * params.tip_mass * arm * tip(i) +
                                   2.0 * params.tip_inertia * tip_slope(i) + 2.0 * coupling;
        sys.mass(0, i + 1) = m_theta_eta;
        sys.mass(i + 1, 0) = m_theta_eta;

        // Upper triangle only; mirrored so symmetry is exact.
        for (int j = i; j < n; ++j) {
            double mass_int = 0.0;
            double stiff_int = 0.0;
            for (Eigen::Index q = 0; q < nq; ++q) {
                mass_int += rule.weights[q] * rho_a * phi(i, q) * phi(j, q);
                stiff_int += rule.weights[q] * params.flexural_rigidity * phi_dd(i, q) * phi_dd(j, q);
            }
            const double m_ij = 2.0 * params.tip_mass * tip(i) * tip(j) +
                                2.0 * params.tip_inertia * tip_slope(i) * tip_slope(j) +
                                2.0 * mass_int;
            sys.mass(i + 1, j + 1) = m_ij;
            sys.mass(j + 1, i + 1) = m_ij;
            sys.stiffness(i + 1, j + 1) = 2.0 * stiff_int;
            sys.stiffness(j + 1, i + 1) = 2.0 * stiff_int;
        }
    }
    return sys;
}

SystemMatrices assemble_system(const SpacecraftParams& params) {
    int order = kBaseQuadratureOrder;
    SystemMatrices current = assemble_system_with_order(params, order);
    while (order < kMaxQuadratureOrder) {
        SystemMatrices refined = assemble_system_with_order(params, 2 * order);
        if (entries_agree(current.mass, refined.mass) &&
            entries_agree(current.stiffness, refined.stiffness)) {
            return current;
        }
        current = std::move(refined);
        order *= 2;
    }
    throw NumericError("beam_model: quadrature did not stabilize to rel 1e-12 up to order " +
                       std::to_string(kMaxQuadratureOrder));
}

}  // namespace mrdmoc
