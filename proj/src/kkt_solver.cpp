#include "mrdmoc/dmoc_ocp.hpp"

#include "mrdmoc/errors.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <string>

namespace mrdmoc {

namespace {

using SpMat = Eigen::SparseMatrix<double>;

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

SpMat kkt_matrix(const QpProblem& qp) {
    const Eigen::Index n = qp.hessian.rows();
    const Eigen::Index m = qp.constraints.rows();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(qp.hessian.nonZeros() + 2 * qp.constraints.nonZeros());
    for (int c = 0; c < qp.hessian.outerSize(); ++c)
        for (SpMat::InnerIterator it(qp.hessian, c); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
    for (int c = 0; c < qp.constraints.outerSize(); ++c) {
        for (SpMat::InnerIterator it(qp.constraints, c); it; ++it) {
            trip.emplace_back(n + it.row(), it.col(), it.value());
            trip.emplace_back(it.col(), n + it.row(), it.value());
        }
    }
    SpMat k(n + m, n + m);
    k.setFromTriplets(trip.begin(), trip.end());
    return k;
}

// Symmetric Ruiz equilibration: returns d with max |d_i K_ij d_j| ~ 1 per column.
Eigen::VectorXd ruiz_scaling(const SpMat& k, int passes) {
    Eigen::VectorXd d = Eigen::VectorXd::Ones(k.rows());
    Eigen::VectorXd colmax(k.rows());
    for (int pass = 0; pass < passes; ++pass) {
        colmax.setZero();
        for (int c = 0; c < k.outerSize(); ++c)
            for (SpMat::InnerIterator it(k, c); it; ++it)
                colmax(c) = std::max(colmax(c), std::abs(d(it.row()) * it.value() * d(c)));
        double spread = 0.0;
        for (Eigen::Index i = 0; i < d.size(); ++i) {
            if (colmax(i) > 0.0) {
                d(i) /= std::sqrt(colmax(i));
                spread = std::max(spread, std::abs(1.0 - colmax(i)));
            }
        }
        if (spread < 1e-3) break;
    }
    return d;
}

struct Residuals {
    double primal = 0.0;
    double stationarity = 0.0;
    double stationarity_normwise = 0.0;
    double worst() const { return std::max(primal, stationarity); }
};

class ResidualMeter {
public:
    explicit ResidualMeter(const QpProblem& qp)
        : qp_(qp), h_abs_(qp.hessian.cwiseAbs()), a_abs_(qp.constraints.cwiseAbs()), b_norm_(inf_norm(qp.rhs)) {}

    Residuals operator()(const Eigen::VectorXd& x) const {
        const Eigen::Index n = qp_.hessian.rows();
        const Eigen::Index m = qp_.constraints.rows();
        const Eigen::VectorXd z = x.head(n);
        const Eigen::VectorXd nu = x.tail(m);
        const Eigen::VectorXd hz = qp_.hessian * z;
        const Eigen::VectorXd atnu = qp_.constraints.transpose() * nu;
        const Eigen::VectorXd stat = hz + qp_.linear + atnu;
        Residuals r;
        r.primal = inf_norm(qp_.constraints * z - qp_.rhs) / (1.0 + b_norm_);
        r.stationarity_normwise =
            inf_norm(stat) / (1.0 + std::max({inf_norm(hz), inf_norm(qp_.linear), inf_norm(atnu)}));
        // componentwise: each row against the magnitude of the terms it sums
        const Eigen::VectorXd terms = Eigen::VectorXd::Ones(n) + h_abs_ * z.cwiseAbs() + qp_.linear.cwiseAbs() +
                                      a_abs_.transpose() * nu.cwiseAbs();
        r.stationarity = n ? stat.cwiseAbs().cwiseQuotient(terms).maxCoeff() : 0.0;
        return r;
    }

private:
    const QpProblem& qp_;
    SpMat h_abs_;
    SpMat a_abs_;
    double b_norm_;
};

struct Attempt {
    Eigen::VectorXd x;
    Residuals residuals;
    int passes = 0;
    double regularization = 0.0;
};

// Factor the equilibrated KKT matrix in Scalar precision, solve, and refine
// against the exact system with residuals formed in Scalar.
template <typename Scalar>
Attempt factor_and_solve(const SpMat& k, const Eigen::VectorXd& d, const Eigen::VectorXd& rhs, Eigen::Index n,
                         const ResidualMeter& meter, const KktOptions& options) {
    using Mat = Eigen::SparseMatrix<Scalar>;
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    const Eigen::Index size = k.rows();
    const Vec dw = d.cast<Scalar>();
    const Mat kw = k.cast<Scalar>();
    Mat ks = dw.asDiagonal() * kw * dw.asDiagonal();
    ks.makeCompressed();

    Attempt out;
    Eigen::SparseLU<Mat, Eigen::COLAMDOrdering<int>> lu;
    lu.analyzePattern(ks);
    lu.factorize(ks);
    if (lu.info() != Eigen::Success) {
        // Breakdown: retry once with the quasi-definite shift (+delta primal, -delta dual).
        Mat shifted = ks;
        for (Eigen::Index i = 0; i < size; ++i)
            shifted.coeffRef(i, i) += static_cast<Scalar>((i < n ? 1.0 : -1.0) * options.regularization);
        shifted.makeCompressed();
        lu.analyzePattern(shifted);
        lu.factorize(shifted);
        out.regularization = options.regularization;
        if (lu.info() != Eigen::Success) {
            throw NumericError("dmoc_ocp: KKT factorization broke down (" + lu.lastErrorMessage() +
                               "; expected inertia +" + std::to_string(n) + "/-" + std::to_string(size - n) + ")");
        }
    }

    const Vec rw = rhs.cast<Scalar>();
    auto solve_scaled = [&](const Vec& r) -> Vec { return dw.asDiagonal() * lu.solve(Vec(dw.asDiagonal() * r)); };
    Vec x = solve_scaled(rw);
    out.residuals = meter(x.template cast<double>());
    // Refinement stops once it no longer pays.
    while (out.passes < options.max_refinement && out.residuals.worst() > 1e-15) {
        const Vec saved = x;
        const Residuals before = out.residuals;
        x += solve_scaled(Vec(rw - kw * x));
        ++out.passes;
        out.residuals = meter(x.template cast<double>());
        if (out.residuals.worst() >= before.worst()) {
            x = saved;
            out.residuals = before;
            break;
        }
    }
    out.x = x.template cast<double>();
    return out;
}

}  // namespace

KktResult solve_kkt(const QpProblem& qp, const KktOptions& options) {
    const Eigen::Index n = qp.hessian.rows();
    const Eigen::Index m = qp.constraints.rows();
    if (qp.hessian.cols() != n || qp.constraints.cols() != n || qp.rhs.size() != m || qp.linear.size() != n) {
        throw DomainError("dmoc_ocp: inconsistent QP dimensions");
    }
    {
        Eigen::VectorXi row_nnz = Eigen::VectorXi::Zero(m);
        for (int c = 0; c < qp.constraints.outerSize(); ++c)
            for (SpMat::InnerIterator it(qp.constraints, c); it; ++it)
                if (it.value() != 0.0) ++row_nnz(it.row());
        for (Eigen::Index i = 0; i < m; ++i) {
            if (row_nnz(i) == 0) {
                throw NumericError("dmoc_ocp: constraint row " + std::to_string(i) +
                                   " is empty, constraint matrix is rank deficient");
            }
        }
    }

    const SpMat k = kkt_matrix(qp);
    const Eigen::VectorXd d = ruiz_scaling(k, options.equilibration_passes);
    Eigen::VectorXd rhs(n + m);
    rhs << -qp.linear, qp.rhs;
    const ResidualMeter meter(qp);
    auto meets = [&](const Residuals& r) { return r.primal <= options.tolerance && r.stationarity <= options.tolerance; };

    Attempt best;
    bool extended = options.precision == KktPrecision::Extended;
    if (!extended) {
        best = factor_and_solve<double>(k, d, rhs, n, meter, options);
        extended = options.precision == KktPrecision::Auto && !meets(best.residuals);
    }
    if (extended) {
        Attempt wide = factor_and_solve<long double>(k, d, rhs, n, meter, options);
        if (best.x.size() == 0 || wide.residuals.worst() < best.residuals.worst()) best = std::move(wide);
        else extended = false;
    }

    KktResult res;
    res.primal = best.x.head(n);
    res.multipliers = best.x.tail(m);
    res.primal_residual = best.residuals.primal;
    res.stationarity_residual = best.residuals.stationarity;
    res.stationarity_normwise = best.residuals.stationarity_normwise;
    res.refinement_passes = best.passes;
    res.regularization = best.regularization;
    res.extended_precision = extended;
    res.converged = res.primal_residual <= options.tolerance && res.stationarity_residual <= options.tolerance;
    return res;
}

}  // namespace mrdmoc
