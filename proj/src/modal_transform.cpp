#include "mrdmoc/modal_transform.hpp"

#include "mrdmoc/errors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace mrdmoc {

namespace {

constexpr double kRigidClampTol = 1e-10;
constexpr double kOrthonormalityTol = 1e-10;
constexpr double kDiagonalizationTol = 1e-8;

void check_split(int split, int size) {
    if (split < 1 || split > size) {
        throw DomainError("modal_transform: split index r=" + std::to_string(split) +
                          " outside [1, " + std::to_string(size) + "]");
    }
}

void normalize_sign(Eigen::MatrixXd& e) {
    for (Eigen::Index c = 0; c < e.cols(); ++c) {
        Eigen::Index pivot = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < e.rows(); ++i) {
            // strict '>' keeps the lowest index on exact magnitude ties
            if (std::abs(e(i, c)) > best) {
                best = std::abs(e(i, c));
                pivot = i;
            }
        }
        if (e(pivot, c) < 0.0) e.col(c) = -e.col(c);
    }
}

void check_dims(const ModalSystem& msys, Eigen::Index n, const char* what) {
    if (n != msys.size()) {
        throw DomainError(std::string("modal_transform: ") + what + " has dimension " +
                          std::to_string(n) + ", expected " + std::to_string(msys.size()));
    }
}

}  // namespace

ModalSystem ModalSystem::with_split(int r) const {
    check_split(r, size());
    ModalSystem copy = *this;
    copy.split = r;
    return copy;
}

ModalSystem solve_modal(const SystemMatrices& sys, int split) {
    const Eigen::Index n = sys.mass.rows();
    if (sys.mass.cols() != n || sys.stiffness.rows() != n || sys.stiffness.cols() != n ||
        sys.input.size() != n) {
        throw DomainError("modal_transform: inconsistent system matrix dimensions");
    }
    check_split(split, static_cast<int>(n));

    const Eigen::LLT<Eigen::MatrixXd> chol(sys.mass);
    if (chol.info() != Eigen::Success) {
        throw ModelError("modal_transform: mass matrix is not positive definite (Cholesky failed)");
    }
    const Eigen::MatrixXd lower = chol.matrixL();
    // C = L^-1 K L^-T, symmetrized against roundoff.
    Eigen::MatrixXd c = lower.triangularView<Eigen::Lower>().solve(sys.stiffness);
    c = lower.triangularView<Eigen::Lower>().solve(c.transpose().eval());
    c = 0.5 * (c + c.transpose()).eval();

    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
    if (eig.info() != Eigen::Success) {
        throw NumericError("modal_transform: symmetric eigen iteration did not converge");
    }

    ModalSystem msys;
    msys.eigenvalues = eig.eigenvalues();
    msys.modal_matrix = lower.transpose().triangularView<Eigen::Upper>().solve(eig.eigenvectors());
    normalize_sign(msys.modal_matrix);
    msys.mass = sys.mass;
    msys.split = split;

    const double lambda_max = std::max(msys.eigenvalues.cwiseAbs().maxCoeff(), 1e-300);
    if (std::abs(msys.eigenvalues(0)) <= kRigidClampTol * lambda_max) msys.eigenvalues(0) = 0.0;
    msys.input = msys.modal_matrix.transpose() * sys.input;

    const Eigen::MatrixXd& e = msys.modal_matrix;
    const Eigen::MatrixXd ortho = e.transpose() * sys.mass * e - Eigen::MatrixXd::Identity(n, n);
    if (ortho.cwiseAbs().maxCoeff() > kOrthonormalityTol) {
        throw NumericError("modal_transform: mass-normalization residual too large");
    }
    const Eigen::MatrixXd diag = e.transpose() * sys.stiffness * e -
                                 Eigen::MatrixXd(msys.eigenvalues.asDiagonal());
    if (diag.cwiseAbs().maxCoeff() > kDiagonalizationTol * lambda_max) {
        throw NumericError("modal_transform: stiffness diagonalization residual too large");
    }
    return msys;
}

ModalState to_modal(const ModalSystem& msys, const Eigen::VectorXd& xi, const Eigen::VectorXd& xi_dot) {
    check_dims(msys, xi.size(), "xi");
    check_dims(msys, xi_dot.size(), "xi_dot");
    const Eigen::MatrixXd inverse = msys.modal_matrix.transpose() * msys.mass;
    // E^T M is E^-1 only up to the orthonormality residual; one correction
    // pass brings E q back onto xi at roundoff level.
    auto apply = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd q = inverse * x;
        q += inverse * (x - msys.modal_matrix * q);
        return q;
    };
    return {apply(xi), apply(xi_dot)};
}

PhysicalState from_modal(const ModalSystem& msys, const ModalState& state) {
    check_dims(msys, state.q.size(), "q");
    check_dims(msys, state.qdot.size(), "qdot");
    return {msys.modal_matrix * state.q, msys.modal_matrix * state.qdot};
}

}  // namespace mrdmoc
