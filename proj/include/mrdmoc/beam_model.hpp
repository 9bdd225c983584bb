#pragma once

/**
 * @file beam_model.hpp
 * @brief Assumed-modes model of a rigid hub with two clamped flexible appendages.
 *
 * Generalized coordinates are xi = [theta, eta_1 .. eta_N]. The appendages are
 * cantilever Euler-Bernoulli beams with tip masses, deforming antisymmetrically
 * in the plane normal to the rotation axis. Units are slug-ft-s-lb throughout.
 */

#include <Eigen/Dense>

#include <vector>

namespace mrdmoc {

/// Physical constants of the hub / beam / tip-mass system.
struct SpacecraftParams {
    double hub_radius = 1.0;           // R [ft]
    double hub_inertia = 8.0;          // J_h [slug-ft^2]
    double tip_mass = 0.156941;        // m_t [slug]
    double tip_inertia = 0.0018;       // J_t [slug-ft^2]
    double beam_length = 4.0;          // L [ft]
    double beam_linear_density = 0.0271875;  // rho*A [slug/ft]
    double flexural_rigidity = 0.0;    // EI [lb-ft^2]
    int num_modes = 5;                 // N

    /// Throws ModelError when a field violates the physical invariants.
    void validate() const;

    /// Reference hub-beam configuration with N = 5.
    static SpacecraftParams reference();
};

/// Rectangular-section flexural rigidity EI = E * h * t^3 / 12.
///
/// Bending is about the stiff axis so that deflection stays in the rotation
/// plane; h and t are given in inches and converted to feet here.
double rectangular_flexural_rigidity(double elastic_modulus_lb_ft2, double height_in,
                                     double thickness_in);

/// Comparison-function basis phi_j(x) = 1 - cos(j pi x / L) + (-1)^(j+1) (j pi x / L)^2 / 2.
class ModeBasis {
public:
    ModeBasis(double length, int num_modes);

    double length() const { return length_; }
    int num_modes() const { return num_modes_; }

    /// phi_j^(deriv)(x) for 1 <= j <= N, 0 <= x <= L, deriv in {0, 1, 2}.
    double eval(int j, double x, int deriv = 0) const;

private:
    double length_;
    int num_modes_;
};

/// Convenience wrapper over ModeBasis::eval.
double eval_mode_shape(const ModeBasis& basis, int j, double x, int deriv);

/// M, K and input map D in physical coordinates xi (size N+1).
struct SystemMatrices {
    Eigen::MatrixXd mass;
    Eigen::MatrixXd stiffness;
    Eigen::VectorXd input;

    Eigen::Index size() const { return mass.rows(); }
};

/// Gauss-Legendre nodes and weights on [a, b].
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

QuadratureRule gauss_legendre(int order, double a, double b);

/// Assembles M and K with a fixed Gauss-Legendre order (no escalation).
SystemMatrices assemble_system_with_order(const SpacecraftParams& params, int quadrature_order);

/// Assembles M, K, D. Beam integrals use 32-point Gauss-Legendre and are
/// accepted once doubling the order changes every entry by < 1e-12 relative.
SystemMatrices assemble_system(const SpacecraftParams& params);

}  // namespace mrdmoc
