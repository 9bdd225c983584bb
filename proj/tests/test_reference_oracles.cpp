#include "mrdmoc/errors.hpp"
#include "mrdmoc/reference_oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

using namespace mrdmoc;

namespace {

ModalSystem synthetic_modal(const Eigen::VectorXd& lambda, const Eigen::VectorXd& z, int r) {
    ModalSystem m;
    m.eigenvalues = lambda;
    m.modal_matrix = Eigen::MatrixXd::Identity(lambda.size(), lambda.size());
    m.mass = m.modal_matrix;
    m.input = z;
    m.split = r;
    return m;
}

const ModalSystem& table_system() {
    static const ModalSystem msys = solve_modal(assemble_system(SpacecraftParams::reference()), 3);
    return msys;
}

Eigen::VectorXd random_vec(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
    return v;
}

// Step-doubling RK4 with Richardson extrapolation on the unforced modal equations.
ModalState adaptive_rk4(const ModalSystem& msys, const ModalState& init, double t_end, double tol) {
    const Eigen::ArrayXd lam = msys.eigenvalues.array();
    auto rk4 = [&](Eigen::ArrayXd q, Eigen::ArrayXd v, double h) {
        const Eigen::ArrayXd k1q = v, k1v = -lam * q;
        const Eigen::ArrayXd k2q = v + 0.5 * h * k1v, k2v = -lam * (q + 0.5 * h * k1q);
        const Eigen::ArrayXd k3q = v + 0.5 * h * k2v, k3v = -lam * (q + 0.5 * h * k2q);
        const Eigen::ArrayXd k4q = v + h * k3v, k4v = -lam * (q + h * k3q);
        q += h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q);
        v += h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
        return std::pair{q, v};
    };
    Eigen::ArrayXd q = init.q.array(), v = init.qdot.array();
    double t = 0.0, h = 1e-3;
    while (t < t_end) {
        h = std::min(h, t_end - t);
        const auto [q1, v1] = rk4(q, v, h);
        const auto [qh, vh] = rk4(q, v, 0.5 * h);
        const auto [q2, v2] = rk4(qh, vh, 0.5 * h);
        const double err = std::max((q2 - q1).abs().maxCoeff(), (v2 - v1).abs().maxCoeff()) / 15.0;
        if (err <= tol) {
            t += h;
            q = q2 + (q2 - q1) / 15.0;
            v = v2 + (v2 - v1) / 15.0;
        }
        h *= std::clamp(0.9 * std::pow(tol / std::max(err, 1e-300), 0.2), 0.2, 2.0);
    }
    return {q.matrix(), v.matrix()};
}

OcpSpec maneuver(double tf, double dt, int p, double theta_deg = 20.0) {
    return OcpSpec::rest_to_rest(table_system(), MultirateGrid::from_micro_step(0.0, tf, dt, p), theta_deg);
}

Eigen::VectorXd modal_target(const OcpSpec& spec) {
    const ModalState s = to_modal(spec.msys, spec.xi_end, Eigen::VectorXd::Zero(spec.msys.size()));
    Eigen::VectorXd x(2 * spec.msys.size());
    x << s.q, s.qdot;
    return x;
}

}  // namespace

TEST_CASE("free response at t = 0 is the initial state") {
    std::mt19937_64 rng(3);
    const ModalSystem& msys = table_system();
    const ModalState init{random_vec(rng, 6), random_vec(rng, 6)};
    const ModalState s = free_response(msys, init, 0.0);
    CHECK((s.q - init.q).norm() == 0.0);
    CHECK((s.qdot - init.qdot).norm() == 0.0);
    CHECK_THROWS_AS(free_response(msys, init, -1.0), DomainError);
    CHECK_THROWS_AS(free_response(msys, ModalState{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)}, 1.0),
                    DomainError);
}

TEST_CASE("free response over one full period returns to the start") {
    const ModalSystem msys = synthetic_modal(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Ones(1), 1);
    const ModalState s = free_response(msys, {Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1)}, 2.0 * std::numbers::pi);
    CHECK(s.q(0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(s.qdot(0)) < 1e-14);
}

TEST_CASE("rigid mode drifts at constant rate") {
    const ModalSystem msys = synthetic_modal(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1), 1);
    const ModalState s = free_response(msys, {Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Constant(1, 2.0)}, 3.0);
    CHECK(s.q(0) == doctest::Approx(6.5));
    CHECK(s.qdot(0) == 2.0);
}

TEST_CASE("free response conserves energy along the sampled path") {
    std::mt19937_64 rng(5);
    const ModalSystem& msys = table_system();
    const ModalState init{random_vec(rng, 6, 0.05), random_vec(rng, 6, 0.5)};
    const double e0 = modal_energy(msys, init);
    double worst = 0.0;
    for (int i = 0; i <= 1000; ++i) {
        const double e = modal_energy(msys, free_response(msys, init, 0.0123 * i));
        worst = std::max(worst, std::abs(e - e0) / e0);
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("free response agrees with adaptive RK4 on random instances") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + trial % 4;
        Eigen::VectorXd lam = random_vec(rng, n, 1.0).cwiseAbs() * 400.0;
        lam(0) = trial % 2 ? 0.0 : lam(0);
        std::sort(lam.data(), lam.data() + n);
        const ModalSystem msys = synthetic_modal(lam, random_vec(rng, n), 1);
        const ModalState init{random_vec(rng, n), random_vec(rng, n)};
        const double t = 0.5 + 0.1 * trial;
        const ModalState exact = free_response(msys, init, t);
        const ModalState rk = adaptive_rk4(msys, init, t, 1e-12);
        CHECK((exact.q - rk.q).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((exact.qdot - rk.qdot).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("fixed-step RK4 converges at fourth order and dissipates energy") {
    const ModalSystem& msys = table_system();
    Eigen::VectorXd xi0(6);
    xi0 << 0.0, 0.05, 0.001, 0.001, 1e-4, 1e-4;
    const ModalState init = to_modal(msys, xi0, Eigen::VectorXd::Zero(6));
    const double tf = 0.2;
    const ModalState exact = free_response(msys, init, tf);
    double prev = 0.0;
    for (int steps : {2000, 4000}) {
        const Rk4Run run = rk4_simulate(msys, init, tf / steps, steps);
        const double err = (run.q.col(steps) - exact.q).cwiseAbs().maxCoeff();
        if (prev > 0.0) CHECK(std::log2(prev / err) == doctest::Approx(4.0).epsilon(0.05));
        prev = err;
    }
    const Rk4Run coarse = rk4_simulate(msys, init, 1e-3, 2000);
    const double e0 = modal_energy(msys, init);
    const double e1 = modal_energy(msys, {coarse.q.col(2000), coarse.qdot.col(2000)});
    CHECK(e1 < e0);
    CHECK_THROWS_AS(rk4_simulate(msys, init, 1e-3, 10, Eigen::VectorXd::Zero(3)), DomainError);
}

TEST_CASE("TPBVP reference of a zero maneuver is zero") {
    const OcpSpec spec = maneuver(0.5, 1e-3, 1, 0.0);
    const LqSeries s = lq_tpbvp_reference(spec, {0.0, 0.1, 0.25, 0.5});
    CHECK(s.cost == 0.0);
    CHECK(s.state.cwiseAbs().maxCoeff() == 0.0);
    CHECK(s.control.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("TPBVP reference meets its boundary values") {
    for (double tf : {0.12, 0.5, 4.5}) {
        CAPTURE(tf);
        const OcpSpec spec = maneuver(tf, 1e-3, 1);
        const LqTpbvp ref(spec);
        CHECK(ref.state(0.0).cwiseAbs().maxCoeff() < 1e-9);
        CHECK((ref.state(tf) - modal_target(spec)).cwiseAbs().maxCoeff() < 1e-9);
        CHECK(ref.boundary_condition() < 1e12);
    }
}

TEST_CASE("TPBVP reference satisfies the optimality system") {
    const OcpSpec spec = maneuver(0.5, 1e-3, 1);
    const LqTpbvp ref(spec);
    const ModalSystem& msys = spec.msys;
    const int n = msys.size();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    a.topRightCorner(n, n).setIdentity();
    a.bottomLeftCorner(n, n) = -Eigen::MatrixXd(msys.eigenvalues.asDiagonal());
    Eigen::VectorXd b = Eigen::VectorXd::Zero(2 * n);
    b.tail(n) = msys.input;
    const double h = 1e-5;
    for (double t : {0.05, 0.2, 0.33, 0.45}) {
        CAPTURE(t);
        const Eigen::VectorXd lam = ref.costate(t);
        const double u = ref.control(t);
        CHECK(std::abs(u + b.dot(lam)) <= 1e-10 * (1.0 + std::abs(u)));
        // Fourth-order central differences of the state and costate.
        auto deriv = [&](auto f) {
            return Eigen::VectorXd((-f(t + 2 * h) + 8 * f(t + h) - 8 * f(t - h) + f(t - 2 * h)) / (12 * h));
        };
        const Eigen::VectorXd xdot = deriv([&](double s) { return ref.state(s); });
        const Eigen::VectorXd lamdot = deriv([&](double s) { return ref.costate(s); });
        const Eigen::VectorXd x = ref.state(t);
        const Eigen::VectorXd fx = a * x + b * u;
        const Eigen::VectorXd fl = -x - a.transpose() * lam;
        CHECK((xdot - fx).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + fx.cwiseAbs().maxCoeff()));
        CHECK((lamdot - fl).cwiseAbs().maxCoeff() <= 1e-6 * (1.0 + fl.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("TPBVP cost matches the costate boundary identity") {
    // d/dt (lam^T x) = -(x^T W x + rho u^2), so J = 1/2 (lam(t0)^T x(t0) - lam(tf)^T x(tf)).
    for (double tf : {0.12, 4.5}) {
        CAPTURE(tf);
        const LqTpbvp ref(maneuver(tf, 1e-3, 1));
        const double identity = 0.5 * (ref.costate(0.0).dot(ref.state(0.0)) - ref.costate(tf).dot(ref.state(tf)));
        CHECK(ref.cost() == doctest::Approx(identity).epsilon(1e-9));
    }
}

TEST_CASE("short horizon maneuver needs large cost and control") {
    const OcpSpec spec = maneuver(0.12, 1e-3, 1);
    const LqTpbvp ref(spec);
    CHECK(ref.cost() >= 1e10);
    CHECK(ref.cost() < 1e12);
    const LqSeries s = ref.sample(micro_midpoints(spec.grid));
    const double umax = s.control.cwiseAbs().maxCoeff();
    CHECK(umax >= 1e5);
    CHECK(umax < 1e7);
}

TEST_CASE("evenly spaced sampling matches direct evaluation") {
    const OcpSpec spec = maneuver(4.5, 1e-3, 5);
    const LqTpbvp ref(spec);
    const std::vector<double> times = macro_times(spec.grid);
    const LqSeries s = ref.sample(times);
    for (std::size_t i : {std::size_t{0}, std::size_t{63}, std::size_t{64}, std::size_t{500}, times.size() - 1}) {
        CHECK((s.state.col(i) - ref.state(times[i])).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(std::abs(s.control(i) - ref.control(times[i])) < 1e-10);
    }
}

TEST_CASE("boundary solve reports ill-conditioned horizons") {
    CHECK_THROWS_AS(LqTpbvp(maneuver(0.02, 1e-3, 1)), NumericError);
    CHECK_THROWS_AS(LqTpbvp(maneuver(60.0, 1e-3, 1)), NumericError);
}

TEST_CASE("TPBVP reference agrees with a fine single-rate DMOC solve") {
    const OcpSpec spec = maneuver(4.5, 1e-3, 1);
    const LqTpbvp ref(spec);
    const OcpSolution fine = fine_grid_reference(spec, 10);
    REQUIRE(fine.converged);
    const ErrorReport e = error_metrics(physical_samples(spec.msys, fine.trajectory),
                                        physical_samples(spec.msys, ref.sample(macro_times(fine.trajectory.grid))));
    CHECK(e.relative < 1e-6);
    CHECK(fine.cost == doctest::Approx(ref.cost()).epsilon(1e-6));
}

TEST_CASE("fine grid reference with refinement 1 is the direct solve") {
    const OcpSpec spec = maneuver(0.5, 1e-3, 1);
    const OcpSolution direct = solve_maneuver(spec);
    const OcpSolution ref = fine_grid_reference(spec, 1);
    CHECK((direct.trajectory.slow - ref.trajectory.slow).cwiseAbs().maxCoeff() == 0.0);
    CHECK((direct.trajectory.control - ref.trajectory.control).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(fine_grid_reference(spec, 0), ConfigError);
}

TEST_CASE("fine grid references converge faster than they differ from the solution") {
    const OcpSpec spec = maneuver(0.5, 1e-3, 1);
    const OcpSolution sol = solve_maneuver(spec);
    const OcpSolution r16 = fine_grid_reference(spec, 16);
    const OcpSolution r32 = fine_grid_reference(spec, 32);
    auto coarse_nodes = [&](const OcpSolution& s, int stride) {
        const Eigen::MatrixXd all = physical_samples(spec.msys, s.trajectory).front().second;
        Eigen::MatrixXd out(all.rows(), spec.grid.macro_count + 1);
        for (int k = 0; k <= spec.grid.macro_count; ++k) out.col(k) = all.col(k * stride);
        return GroupedSamples{{"config", out}};
    };
    const double between_refs = error_metrics(coarse_nodes(r16, 16), coarse_nodes(r32, 32)).relative;
    CHECK(between_refs < error_metrics(coarse_nodes(sol, 1), coarse_nodes(r16, 16)).relative);
    CHECK(between_refs < error_metrics(coarse_nodes(sol, 1), coarse_nodes(r32, 32)).relative);
}

TEST_CASE("error metrics follow the max-node infinity norm") {
    Eigen::MatrixXd ref(2, 4);
    ref << 1, 2, 3, 4, -5, 0, 1, 2;
    const GroupedSamples r{{"slow", ref.topRows(1)}, {"fast", ref.bottomRows(1)}};

    const ErrorReport same = error_metrics(r, r);
    CHECK(same.absolute == 0.0);
    CHECK(same.relative == 0.0);
    CHECK(same.node_count == 4);

    GroupedSamples shifted = r;
    shifted[1].second.array() += 0.25;
    const ErrorReport e = error_metrics(shifted, r);
    CHECK(e.absolute == 0.25);
    CHECK(e.relative == doctest::Approx(0.25 / 5.0));
    CHECK(e.group("slow").absolute == 0.0);
    CHECK(e.group("fast").absolute == 0.25);
    CHECK(e.group("fast").relative == doctest::Approx(0.05));
    CHECK_THROWS_AS(e.group("control"), DomainError);
}

TEST_CASE("error metrics reject undefined comparisons") {
    const GroupedSamples zero{{"config", Eigen::MatrixXd::Zero(3, 5)}};
    const GroupedSamples one{{"config", Eigen::MatrixXd::Ones(3, 5)}};
    CHECK_THROWS_AS(error_metrics(one, zero), DomainError);
    const GroupedSamples empty{{"config", Eigen::MatrixXd(3, 0)}};
    CHECK_THROWS_AS(error_metrics(empty, empty), DomainError);
    CHECK_THROWS_AS(error_metrics(GroupedSamples{}, GroupedSamples{}), DomainError);
    const GroupedSamples other{{"control", Eigen::MatrixXd::Ones(3, 5)}};
    CHECK_THROWS_AS(error_metrics(one, other), DomainError);
    const GroupedSamples mixed{{"a", Eigen::MatrixXd::Zero(1, 5)}, {"b", Eigen::MatrixXd::Ones(1, 5)}};
    CHECK(std::isnan(error_metrics(mixed, mixed).group("a").relative));
}

TEST_CASE("trajectory samplers pick macro nodes and midpoints") {
    const ModalSystem& msys = table_system();
    const MultirateGrid g = MultirateGrid::from_micro_step(0.0, 0.03, 1e-3, 5);
    MultirateTrajectory traj(g, 3, 3);
    for (int j = 0; j <= g.num_micro_intervals(); ++j) traj.fast.col(j).setConstant(j);
    for (int k = 0; k <= g.macro_count; ++k) traj.slow.col(k).setConstant(-k);
    traj.control.setLinSpaced(g.num_micro_intervals(), 0.0, 1.0);
    const GroupedSamples m = modal_samples(traj);
    CHECK(m[1].second.cols() == g.macro_count + 1);
    CHECK(m[1].second(0, 2) == 10.0);
    CHECK(m[0].second(2, 3) == -3.0);
    CHECK(control_samples(traj)[0].second.cols() == g.num_micro_intervals());
    CHECK(macro_times(g).size() == 7);
    CHECK(micro_midpoints(g).front() == doctest::Approx(0.5e-3));
    const GroupedSamples xi = physical_samples(msys, traj);
    CHECK((xi[0].second.col(2) - msys.modal_matrix * traj.modal_config(2)).norm() == 0.0);
}
