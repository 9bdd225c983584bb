#pragma once

#include "mrdmoc/beam_model.hpp"

#include <Eigen/Dense>

namespace mrdmoc {

/// Mass-normalized modal decomposition K e = lambda M e, split into a slow
/// block (first r coordinates) and a fast block (remaining N+1-r).
struct ModalSystem {
    Eigen::VectorXd eigenvalues;   // ascending, eigenvalues(0) == 0 (rigid mode)
    Eigen::MatrixXd modal_matrix;  // E, columns mass-normalized
    Eigen::VectorXd input;         // Z = E^T D
    Eigen::MatrixXd mass;          // physical M, kept for E^-1 = E^T M
    int split = 1;                 // r

    int size() const { return static_cast<int>(eigenvalues.size()); }
    int num_slow() const { return split; }
    int num_fast() const { return size() - split; }

    auto slow_eigenvalues() const { return eigenvalues.head(split); }
    auto fast_eigenvalues() const { return eigenvalues.tail(num_fast()); }
    auto slow_input() const { return input.head(split); }
    auto fast_input() const { return input.tail(num_fast()); }

    /// Natural frequencies sqrt(lambda) [rad/s].
    Eigen::VectorXd frequencies() const { return eigenvalues.cwiseSqrt(); }

    /// Same eigen-decomposition with a different slow/fast split.
    ModalSystem with_split(int r) const;
};

struct ModalState {
    Eigen::VectorXd q;
    Eigen::VectorXd qdot;
};

/// Generalized symmetric-definite eigenproblem via Cholesky reduction.
///
/// Columns are sign-normalized so the largest-magnitude entry is positive
/// (lowest index wins ties), making E reproducible bit-for-bit. The rigid
/// eigenvalue is clamped to exactly 0 when |lambda_1| <= 1e-10 max(lambda).
ModalSystem solve_modal(const SystemMatrices& sys, int split);

/// q = E^-1 xi computed as E^T M xi.
ModalState to_modal(const ModalSystem& msys, const Eigen::VectorXd& xi, const Eigen::VectorXd& xi_dot);

struct PhysicalState {
    Eigen::VectorXd xi;
    Eigen::VectorXd xi_dot;
};

PhysicalState from_modal(const ModalSystem& msys, const ModalState& state);

}  // namespace mrdmoc
