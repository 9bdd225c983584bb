#include "mrdmoc/dmoc_ocp.hpp"
#include "mrdmoc/errors.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <numbers>
#include <random>
#include <set>

using namespace mrdmoc;

namespace {

ModalSystem reference_modal(int r = 3) { return solve_modal(assemble_system(SpacecraftParams::reference()), r); }

double noether_ratio(const ModalSystem& msys, const MultirateTrajectory& traj) {
    const Diagnostics d = diagnostics(msys, traj);
    double psi = 0.0;
    double pmax = 0.0;
    for (std::size_t k = 0; k < d.time.size(); ++k) {
        psi = std::max(psi, std::abs(d.noether[k]));
        pmax = std::max(pmax, std::abs(d.p_theta[k]));
    }
    return psi / pmax;
}

}  // namespace

TEST_CASE("discrete cost trivial values") {
    const ModalSystem msys = reference_modal();
    const MultirateGrid g = MultirateGrid::from_micro_step(0.0, 1.0, 0.01, 4);
    CostWeights w{Eigen::MatrixXd::Identity(12, 12), 1.0};
    const Eigen::VectorXd zs = Eigen::VectorXd::Zero(3);
    const Eigen::MatrixXd zf = Eigen::MatrixXd::Zero(3, 5);
    CHECK(discrete_cost(msys, g, zs, zs, zf, Eigen::VectorXd::Zero(4), w) == 0.0);
    Eigen::VectorXd tau = Eigen::VectorXd::Zero(4);
    tau(2) = 3.0;
    CHECK(discrete_cost(msys, g, zs, zs, zf, tau, w) == doctest::Approx(0.01 * 9.0 / 2.0).epsilon(1e-15));
    w.control = 2.0;
    CHECK(discrete_cost(msys, g, zs, zs, zf, tau, w) == doctest::Approx(0.01 * 9.0).epsilon(1e-15));
    CHECK_THROWS_AS(discrete_cost(msys, g, zs, zs, zf, Eigen::VectorXd::Zero(3), w), DomainError);
}

TEST_CASE("discrete cost on a constant-velocity path equals the exact integral of the quadratic") {
    // single rate, one slow coordinate: x(t) = a + v t on [0, h], xbar at midpoint
    const ModalSystem msys = reference_modal(6);
    const MultirateGrid g = MultirateGrid::from_micro_step(0.0, 1.0, 0.1, 1);
    const CostWeights w{Eigen::MatrixXd::Identity(12, 12), 1.0};
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd a(6), b(6);
    for (int i = 0; i < 6; ++i) {
        a(i) = u(rng);
        b(i) = u(rng);
    }
    const Eigen::VectorXd v = (b - a) / 0.1;
    const Eigen::VectorXd mid = 0.5 * (a + b);
    const double expected = 0.1 * 0.5 * (mid.squaredNorm() + v.squaredNorm()) + 0.1 * 0.5 * 0.25;
    CHECK(discrete_cost(msys, g, a, b, Eigen::MatrixXd::Zero(0, 2), Eigen::VectorXd::Constant(1, 0.5), w) ==
          doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("layout counts reproduce the closed-form size formulas") {
    const double dt = 1e-3;
    const double tf = 4.5;
    const int n_modes = 5;
    for (int p = 1; p <= 10; ++p) {
        if (std::abs(std::round(tf / (p * dt)) - tf / (p * dt)) > 1e-9) continue;
        for (int r = 1; r <= 5; ++r) {
            const int ns = static_cast<int>(std::lround(tf / (p * dt)));
            const VariableLayout lay(r, n_modes + 1 - r, ns, p);
            CHECK(lay.n_slow_var() == VariableLayout::formula_slow_var(p, r, n_modes, tf, dt));
            CHECK(lay.n_fast_var() == VariableLayout::formula_fast_var(r, n_modes, tf, dt));
            CHECK(lay.n_eq_con() == VariableLayout::formula_eq_con(p, r, n_modes, tf, dt));
        }
    }
    const VariableLayout paper(3, 3, 900, 5);
    CHECK(paper.n_slow_var() == 5406);
    CHECK(paper.n_fast_var() == 31506);
}

TEST_CASE("layout is a bijection onto the decision vector") {
    for (int p : {1, 3}) {
        for (int r : {1, 3, 6}) {
            const int nf = 6 - r;
            const VariableLayout lay(r, nf, 4, p);
            std::set<Eigen::Index> seen;
            for (int k = 0; k <= 4; ++k)
                for (int i = 0; i < r; ++i) {
                    seen.insert(lay.slow_q(k, i));
                    seen.insert(lay.slow_p(k, i));
                }
            for (int j = 0; j <= 4 * p; ++j)
                for (int i = 0; i < nf; ++i) {
                    seen.insert(lay.fast_q(j, i));
                    seen.insert(lay.fast_p(j, i));
                }
            for (int j = 0; j < 4 * p; ++j) seen.insert(lay.tau(j));
            CHECK(static_cast<Eigen::Index>(seen.size()) == lay.n_total_var());
            CHECK(*seen.begin() == 0);
            CHECK(*seen.rbegin() == lay.n_total_var() - 1);
        }
    }
}

TEST_CASE("problem size shrinks with p and r") {
    Eigen::Index prev_var = 0;
    Eigen::Index prev_con = 0;
    for (int p : {1, 2, 3, 4, 5, 6, 9, 10}) {
        const VariableLayout lay(3, 3, static_cast<int>(std::lround(4.5 / (p * 1e-3))), p);
        if (p > 1) {
            CHECK(lay.n_total_var() <= prev_var);
            CHECK(lay.n_eq_con() <= prev_con);
        }
        prev_var = lay.n_total_var();
        prev_con = lay.n_eq_con();
    }
    for (int r = 2; r <= 5; ++r) {
        CHECK(VariableLayout(r, 6 - r, 900, 5).n_total_var() < VariableLayout(r - 1, 7 - r, 900, 5).n_total_var());
    }
}

TEST_CASE("assembled QP structure") {
    const ModalSystem msys = reference_modal();
    const MultirateGrid g = MultirateGrid::from_micro_step(0.0, 0.06, 1e-3, 3);
    const AssembledOcp a = assemble(OcpSpec::rest_to_rest(msys, g, 20.0));
    const VariableLayout& lay = a.layout;
    REQUIRE(a.qp.constraints.rows() == lay.n_eq_con());
    REQUIRE(a.qp.constraints.cols() == lay.n_total_var());
    REQUIRE(a.qp.hessian.rows() == lay.n_total_var());

    const Eigen::MatrixXd h(a.qp.hessian);
    CHECK((h - h.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h).eigenvalues();
    CHECK(ev.minCoeff() >= -1e-12 * ev.maxCoeff());

    const Eigen::MatrixXd am(a.qp.constraints);
    CHECK(Eigen::FullPivLU<Eigen::MatrixXd>(am).rank() == am.rows());

    // every row touches at most two adjacent macro intervals
    const Eigen::Index block = lay.slow_q(1, 0);
    for (Eigen::Index i = 0; i < am.rows(); ++i) {
        Eigen::Index lo = am.cols();
        Eigen::Index hi = 0;
        for (Eigen::Index c = 0; c < am.cols(); ++c) {
            if (am(i, c) != 0.0) {
                lo = std::min(lo, c / block);
                hi = std::max(hi, c / block);
            }
        }
        CHECK(hi - lo <= 1);
    }
}

TEST_CASE("constraint nonzeros grow linearly with the horizon") {
    const ModalSystem msys = reference_modal();
    auto nnz = [&](double tf) {
        const MultirateGrid g = MultirateGrid::from_micro_step(0.0, tf, 1e-3, 5);
        return assemble(OcpSpec::rest_to_rest(msys, g, 20.0)).qp.constraints.nonZeros();
    };
    const double n1 = static_cast<double>(nnz(0.5));
    const double n2 = static_cast<double>(nnz(1.0));
    const double n4 = static_cast<double>(nnz(2.0));
    CHECK((n4 - n2) == doctest::Approx(2.0 * (n2 - n1)).epsilon(1e-12));
}

TEST_CASE("hand-solvable KKT system") {
    QpProblem qp;
    qp.hessian.resize(2, 2);
    qp.hessian.insert(0, 0) = 1.0;
    qp.hessian.insert(1, 1) = 1.0;
    qp.constraints.resize(1, 2);
    qp.constraints.insert(0, 0) = 1.0;
    qp.rhs = Eigen::VectorXd::Ones(1);
    qp.linear = Eigen::VectorXd::Zero(2);
    const KktResult res = solve_kkt(qp);
    CHECK(res.converged);
    CHECK(res.primal(0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(res.primal(1)) <= 1e-14);
    CHECK(res.multipliers(0) == doctest::Approx(-1.0).epsilon(1e-14));

    qp.constraints.resize(2, 2);
    qp.constraints.insert(0, 0) = 1.0;
    qp.rhs = Eigen::VectorXd::Ones(2);
    CHECK_THROWS_AS(solve_kkt(qp), NumericError);
}

TEST_CASE("zero maneuver has zero solution") {
    const ModalSystem msys = reference_modal();
    const MultirateGrid g = MultirateGrid::from_micro_step(0.0, 0.2, 1e-3, 5);
    const OcpSolution sol = solve_maneuver(OcpSpec::rest_to_rest(msys, g, 0.0));
    CHECK(sol.converged);
    CHECK(sol.trajectory.slow.cwiseAbs().maxCoeff() == 0.0);
    CHECK(sol.trajectory.fast.cwiseAbs().maxCoeff() == 0.0);
    CHECK(sol.trajectory.control.cwiseAbs().maxCoeff() == 0.0);
    CHECK(sol.cost == 0.0);
}

TEST_CASE("specification validation") {
    const ModalSystem msys = reference_modal();
    const MultirateGrid g = MultirateGrid::from_micro_step(0.0, 0.2, 1e-3, 5);
    OcpSpec spec = OcpSpec::rest_to_rest(msys, g, 20.0);
    spec.xi_end = Eigen::VectorXd::Zero(5);
    CHECK_THROWS_AS(assemble(spec), ConfigError);
    spec = OcpSpec::rest_to_rest(msys, g, 20.0);
    spec.state_weight = Eigen::MatrixXd::Identity(12, 12);
    spec.state_weight(0, 1) = 1.0;
    CHECK_THROWS_AS(assemble(spec), ConfigError);
    spec.state_weight = -Eigen::MatrixXd::Identity(12, 12);
    CHECK_THROWS_AS(assemble(spec), ConfigError);
    spec = OcpSpec::rest_to_rest(msys, g, 20.0);
    spec.control_weight = 0.0;
    CHECK_THROWS_AS(assemble(spec), ConfigError);
    CHECK(OcpSpec::rest_to_rest(msys, g, 20.0).xi_end(0) == doctest::Approx(0.3490658503988659).epsilon(1e-15));
}

TEST_CASE("optimal trajectory re-simulated by the integrator from its controls") {
    const ModalSystem msys = reference_modal();
    for (int p : {1, 2, 5}) {
        const MultirateGrid g = MultirateGrid::from_micro_step(0.0, 0.5, 1e-3, p);
        const OcpSpec spec = OcpSpec::rest_to_rest(msys, g, 20.0);
        const OcpSolution sol = solve_maneuver(spec);
        REQUIRE(sol.converged);
        const ModalState start{Eigen::VectorXd::Zero(6), Eigen::VectorXd::Zero(6)};
        const MultirateTrajectory sim = simulate(msys, g, start, sol.trajectory.control);
        const double scale = sol.trajectory.slow.cwiseAbs().maxCoeff();
        CHECK((sim.slow - sol.trajectory.slow).cwiseAbs().maxCoeff() <= 1e-8 * scale);
        CHECK((sim.fast - sol.trajectory.fast).cwiseAbs().maxCoeff() <= 1e-8 * scale);
        // stored node momenta agree with the integrator's Legendre transforms
        for (int k = 0; k <= g.macro_count; k += 25) {
            Eigen::VectorXd mom(6);
            mom << sol.slow_momentum.col(k), sol.fast_momentum.col(static_cast<Eigen::Index>(k) * p);
            CHECK((node_momentum(msys, sol.trajectory, k) - mom).cwiseAbs().maxCoeff() <=
                  1e-8 * (1.0 + sol.slow_momentum.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("20 degree rest-to-rest maneuver") {
    const ModalSystem msys = reference_modal();
    const MultirateGrid g = MultirateGrid::from_micro_step(0.0, 4.5, 1e-3, 5);
    const OcpSpec spec = OcpSpec::rest_to_rest(msys, g, 20.0);
    const AssembledOcp a = assemble(spec);
    const KktResult kkt = solve_kkt(a.qp);
    const OcpSolution sol = solve_maneuver(spec);
    CHECK(sol.converged);
    CHECK(sol.warnings.empty());
    CHECK(sol.primal_residual <= 1e-8);
    CHECK(sol.stationarity_residual <= 1e-8);
    CHECK(sol.integrator_residual <= 1e-8);
    CHECK(sol.cost == doctest::Approx(0.5 * kkt.primal.dot(a.qp.hessian * kkt.primal)).epsilon(1e-10));

    const int n = g.macro_count;
    const PhysicalState end = from_modal(msys, {sol.trajectory.modal_config(n), node_momentum(msys, sol.trajectory, n)});
    CHECK(end.xi(0) == doctest::Approx(20.0 * std::numbers::pi / 180.0).epsilon(1e-10));
    CHECK(end.xi.tail(5).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(end.xi_dot.cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(noether_ratio(msys, sol.trajectory) <= 1e-8);
    // rest-to-rest: the accumulated control impulse vanishes
    CHECK(std::abs(sol.trajectory.control.sum() * g.micro_step) <= 1e-8 * sol.trajectory.control.cwiseAbs().maxCoeff());
}
