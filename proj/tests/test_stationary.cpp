#include <doctest.h>

#include <cmath>
#include <numbers>

#include "mfgstop/density.hpp"
#include "mfgstop/scenarios.hpp"
#include "mfgstop/stationary.hpp"
#include "support.hpp"

using namespace mfgstop;

namespace {

ScalarField solve_a(const ScalarField& rhs) {
    const Eigen::VectorXd x = testsupport::dense_elliptic(rhs.grid(), 1.0).lu().solve(testsupport::vec(rhs));
    return testsupport::field(rhs.grid(), x);
}

// Largest residual of the penalized equations at (u, m, alpha).
double penalized_equations(const PenalizedTriple& t, const CostOperator& cost, const ScalarField& rho) {
    const ScalarField fu = apply_elliptic(t.u) - cost(t.m);
    const ScalarField fm = apply_elliptic(t.m) - rho;
    // Mixed nodes sit at u = 0 up to rounding.
    const double zero_band = 1e-14 * (1.0 + t.u.max_abs());
    double r = 0.0;
    for (std::size_t i = 0; i < t.u.size(); ++i) {
        r = std::max(r, std::abs(fu[i] + std::max(t.u[i], 0.0) / t.epsilon));
        const double kill = t.u[i] >= -zero_band ? t.alpha[i] * t.m[i] / t.epsilon : 0.0;
        r = std::max(r, std::abs(fm[i] + kill));
        if (t.u[i] > 0.0) r = std::max(r, std::abs(t.alpha[i] - 1.0));
        r = std::max({r, -t.alpha[i], t.alpha[i] - 1.0});
    }
    return r;
}

CostOperator contact_cost(const Grid& g) {
    return CostOperator::local_power(
        1.0, 1.0,
        ScalarField::from_function(g, [](double x, double) { return 0.2 + 0.3 * std::sin(2.0 * std::numbers::pi * x); }));
}

}  // namespace

TEST_SUITE("stationary") {

TEST_CASE("positive constant cost stops everyone at rate one over eps") {
    const Grid g = Grid::line(0.0, 1.0, 5);
    const ScalarField rho(g, 1.0);
    const CostOperator cost = CostOperator::constant(ScalarField(g, 0.5));
    for (double eps : {1e-3, 1e-4}) {
        const PenalizedTriple t = penalized_coupled_solve(cost, rho, eps);
        CHECK(t.u.min() >= 0.0);
        CHECK(t.u.max() <= eps);
        CHECK(t.alpha.min() == doctest::Approx(1.0));
        CHECK(t.m.max_abs() <= eps * rho.max_abs());
        CHECK(t.m.max_abs() >= 0.5 * eps * rho.max_abs());
    }
}

TEST_CASE("negative constant cost decouples") {
    const Grid g = Grid::line(0.0, 1.0, 9);
    const ScalarField rho = raised_cosine_bump(g);
    const PenalizedTriple t = penalized_coupled_solve(CostOperator::constant(ScalarField(g, -1.0)), rho, 1e-2);
    CHECK(t.u.max() < 0.0);
    CHECK(sup_distance(t.u, solve_a(ScalarField(g, -1.0))) <= 1e-12);
    CHECK(sup_distance(t.m, solve_a(rho)) <= 1e-12);
}

TEST_CASE("penalized triple satisfies its equations") {
    const Scenario s = scenario_standard("monotone_1d");
    for (double eps : {1e-1, 1e-2, 1e-4}) {
        const PenalizedTriple t = penalized_coupled_solve(s.cost, *s.rho, eps);
        CHECK(penalized_equations(t, s.cost, *s.rho) <= 1e-8);
        CHECK(check_subsolution(t.m, *s.rho).min_slack >= -1e-9);
    }
    const Grid g = Grid::line(0.0, 1.0, 31);
    const ScalarField rho = 4.0 * raised_cosine_bump(g);
    const PenalizedTriple t = penalized_coupled_solve(contact_cost(g), rho, 1e-3);
    CHECK(penalized_equations(t, contact_cost(g), rho) <= 1e-8);
}

TEST_CASE("damped Picard reaches the active-set solution") {
    const Grid g = Grid::line(0.0, 1.0, 15);
    const ScalarField rho = 4.0 * raised_cosine_bump(g);
    StationarySolveConfig picard;
    picard.scheme = CoupledScheme::picard;
    picard.tol = 1e-9;
    const PenalizedTriple a = penalized_coupled_solve(contact_cost(g), rho, 1e-1);
    const PenalizedTriple b = penalized_coupled_solve(contact_cost(g), rho, 1e-1, picard);
    CHECK(b.scheme == "picard");
    CHECK(sup_distance(a.m, b.m) <= 1e-6);
    CHECK(sup_distance(a.u, b.u) <= 1e-6);
}

TEST_CASE("continuation ends in a verified mixed solution") {
    const Grid g = Grid::line(0.0, 1.0, 31);
    const ScalarField rho = 4.0 * raised_cosine_bump(g);
    const ContinuationResult res = continuation_solve(contact_cost(g), rho, geometric_schedule(0.1, 0.1, 6));
    REQUIRE(res.limit_solved);
    CHECK(res.report.max_residual() <= 1e-6);
    CHECK(res.report.r_duality <= 1e-6);
    CHECK(res.report.contact_nodes > 0);
    for (const auto& st : res.stages) CHECK(st.report.r_duality <= 1e-6);
    CHECK(check_subsolution(res.m, rho).min_slack >= -1e-9);
}

TEST_CASE("zero source gives zero density at every stage") {
    const Scenario s = scenario_standard("monotone_1d");
    const ScalarField rho(s.grid);
    const ContinuationResult res = continuation_solve(s.cost, rho, geometric_schedule(0.1, 0.25, 4));
    CHECK(res.m.max_abs() == 0.0);
    for (const auto& st : res.stages) CHECK(st.report.r_positivity == 0.0);
}

TEST_CASE("single stage schedule equals a single penalized solve") {
    const Scenario s = scenario_standard("monotone_1d");
    const ContinuationResult res = continuation_solve(s.cost, *s.rho, {0.05}, {}, std::nullopt, false);
    const PenalizedTriple t = penalized_coupled_solve(s.cost, *s.rho, 0.05);
    CHECK(res.u == t.u);
    CHECK(res.m == t.m);
    CHECK_FALSE(res.limit_solved);
}

TEST_CASE("monotone iteration on decoupling order-reversing costs") {
    const Grid g = Grid::line(0.0, 1.0, 21);
    const ScalarField rho = raised_cosine_bump(g);
    const ScalarField w(g, 1.0);
    const auto stop_all = monotone_iteration_solve(CostOperator::nonlocal_affine(ScalarField(g, 1.0), -0.5, w), rho);
    CHECK(stop_all.m.max_abs() == 0.0);
    CHECK(stop_all.iterations <= 2);
    const auto never = monotone_iteration_solve(CostOperator::nonlocal_affine(ScalarField(g, -1.0), -1.0, w), rho);
    CHECK(sup_distance(never.m, solve_a(rho)) <= 1e-12);
    CHECK(never.u.max() < 0.0);
    CHECK(never.iterations <= 2);
    CHECK_THROWS_AS(monotone_iteration_solve(CostOperator::local_power(1.0, 1.0, ScalarField(g)), rho),
                    std::invalid_argument);
}

TEST_CASE("monotone iteration returns the smallest solution") {
    const Scenario s = scenario_standard("anti_monotone_1d");
    const auto mono = monotone_iteration_solve(s.cost, *s.rho);
    const ContinuationResult cont = continuation_solve(s.cost, *s.rho, geometric_schedule());
    CHECK(mono.max_m_decrease <= 1e-10);
    CHECK(mono.max_u_increase <= 1e-10);
    for (std::size_t i = 0; i < mono.m.size(); ++i) CHECK(mono.m[i] <= cont.m[i] + 1e-6);
    CHECK(verify_mixed(mono.u, mono.m, s.cost, *s.rho).max_residual() <= 1e-8);
}

TEST_CASE("variational minimizer on decoupled potentials") {
    const Grid g = Grid::line(0.0, 1.0, 15);
    const ScalarField rho = raised_cosine_bump(g);
    const auto saturated = variational_minimize(
        PotentialOperator::from_cost(CostOperator::local_power(1.0, 1.0, ScalarField(g, -1.0))), rho);
    CHECK(sup_distance(saturated.m, solve_a(rho)) <= 1e-8);
    const auto zero =
        variational_minimize(PotentialOperator::from_cost(CostOperator::local_power(1.0, 1.0, ScalarField(g))), rho);
    CHECK(zero.m.max_abs() <= 1e-9);
}

TEST_CASE("variational and continuation agree on a monotone instance") {
    const Scenario s = scenario_standard("monotone_1d");
    const auto var = variational_minimize(PotentialOperator::from_cost(s.cost), *s.rho);
    const ContinuationResult cont = continuation_solve(s.cost, *s.rho, geometric_schedule());
    CHECK(sup_distance(var.m, cont.m) <= 1e-4);
    CHECK(var.euler_lagrange_min >= -1e-6);
    CHECK(var.battery_size > 0);
    CHECK(var.feasibility <= 1e-9);
}

TEST_CASE("verifier flags constructed violations") {
    const Grid g = Grid::line(0.0, 1.0, 21);
    const ScalarField rho = raised_cosine_bump(g);
    const CostOperator cost = contact_cost(g);
    const auto bad = verify_mixed(ScalarField(g), solve_a(rho), CostOperator::constant(ScalarField(g, -1.0)), rho);
    CHECK(bad.r_obstacle > 0.1);
    const CostOperator positive = CostOperator::local_power(1.0, 1.0, ScalarField(g, 0.3));
    const auto good = verify_mixed(ScalarField(g), ScalarField(g), positive, rho);
    CHECK(good.max_residual() == 0.0);
    CHECK(good.r_duality == 0.0);
    (void)cost;
}

TEST_CASE("uniqueness probe") {
    const Scenario s = scenario_standard("monotone_1d");
    CHECK(uniqueness_probe(s.cost, *s.rho, consecutive_seeds(1, 5)) <= 1e-5);
    CHECK(uniqueness_probe(s.cost, *s.rho, {7, 7}) == 0.0);
    const auto ev = scenario_nonuniqueness();
    const double gap = uniqueness_probe(ev.scenario.cost, *ev.scenario.rho, consecutive_seeds(1, 8));
    CHECK(gap >= 0.5 * ev.m_star.max_abs());
}

}  // TEST_SUITE
