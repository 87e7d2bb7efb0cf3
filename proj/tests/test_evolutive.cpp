#include <doctest.h>

#include <cmath>

#include "mfgstop/density.hpp"
#include "mfgstop/evolutive.hpp"
#include "mfgstop/scenarios.hpp"
#include "support.hpp"

using namespace mfgstop;

namespace {

// Dense backward Euler: (I/dt + A_0) p_{k-1} = p_k/dt - s_k.
FieldTrajectory dense_backward_heat(const FieldTrajectory& source, const ScalarField& terminal) {
    const Grid& g = source.grid();
    const TimeGrid& tg = source.timegrid();
    const double dt = tg.dt();
    Eigen::MatrixXd b = testsupport::dense_elliptic(g, 0.0);
    b.diagonal().array() += 1.0 / dt;
    const auto lu = b.lu();
    FieldTrajectory p(tg, g);
    p[tg.n_steps()] = terminal;
    for (int k = tg.n_steps(); k >= 1; --k) {
        const Eigen::VectorXd rhs = testsupport::vec(p[k]) / dt - testsupport::vec(source[k]);
        p[k - 1] = testsupport::field(g, lu.solve(rhs));
    }
    return p;
}

FieldTrajectory trajectory_of(const TimeGrid& tg, const ScalarField& f) {
    FieldTrajectory t(tg, f.grid());
    for (std::size_t k = 0; k < t.n_slices(); ++k) t[k] = f;
    return t;
}

}  // namespace

TEST_SUITE("evolutive") {

TEST_CASE("heat obstacle with a vanishing source is zero") {
    const Grid g = Grid::line(0.0, 1.0, 11);
    const TimeGrid tg(1.0, 10);
    const ObstacleOperator op = ObstacleOperator::heat_from_g(CostOperator::constant(ScalarField(g)));
    const auto ev = op.apply(FieldTrajectory(tg, g, 0.7));
    CHECK(ev.psi.max_abs() == 0.0);
    CHECK(ev.g_psi.max_abs() == 0.0);
    CHECK(op.depends_on_m());
    CHECK_FALSE(ObstacleOperator::zero(tg, g).depends_on_m());
}

TEST_CASE("backward heat solve matches a dense oracle") {
    std::mt19937_64 rng(50);
    const Grid g = Grid::square(0.0, 1.0, 5, 6);
    const TimeGrid tg(0.5, 12);
    FieldTrajectory source(tg, g);
    for (std::size_t k = 1; k < source.n_slices(); ++k) source[k] = testsupport::random_field(g, rng, -1.0, 1.0);
    const ScalarField terminal = testsupport::random_field(g, rng, -1.0, 0.0);
    CHECK(sup_distance(backward_heat(source, terminal), dense_backward_heat(source, terminal)) <= 1e-10);
}

TEST_CASE("heat obstacle evaluates the cost of the density as its source") {
    const Scenario s = scenario_standard("evolutive_heat_g");
    const FieldTrajectory m = detail::heat_flow(*s.m0, *s.timegrid);
    const auto ev = s.obstacle->apply(m);
    const CostOperator& gcost = *s.obstacle->source_cost();
    FieldTrajectory source(*s.timegrid, s.grid);
    for (std::size_t k = 1; k < source.n_slices(); ++k) source[k] = gcost(m[k]);
    CHECK(sup_distance(ev.psi, dense_backward_heat(source, ScalarField(s.grid))) <= 1e-10);
    for (std::size_t k = 1; k < source.n_slices(); ++k) CHECK(sup_distance(ev.g_psi[k], source[k]) == 0.0);
}

TEST_CASE("nonnegative cost stops everyone at once") {
    const Grid g = Grid::line(0.0, 1.0, 15);
    const TimeGrid tg(1.0, 20);
    const ScalarField m0 = gaussian_density(g);
    const CostOperator cost = CostOperator::constant(ScalarField(g, 0.5));
    const ObstacleOperator psi0 = ObstacleOperator::zero(tg, g);
    const EvolutiveTriple pen = osmfg_penalized_solve(cost, psi0, m0, tg, 1e-4);
    CHECK(pen.u.max_abs() <= 1e-3);
    for (int k = 0; k < tg.n_steps(); ++k) CHECK(pen.alpha[k].min() == doctest::Approx(1.0));
    CHECK(pen.m[tg.n_steps()].max_abs() <= 1e-6 * m0.max_abs());

    const EvolutiveResult lim = osmfg_continuation(cost, psi0, m0, tg, {1e-2, 1e-4});
    REQUIRE(lim.limit_solved);
    CHECK(lim.solution.u.max_abs() <= 1e-12);
    for (std::size_t k = 1; k < lim.solution.m.n_slices(); ++k) CHECK(lim.solution.m[k].max_abs() <= 1e-12);
}

TEST_CASE("negative cost never stops and the density is the heat flow") {
    const Grid g = Grid::line(0.0, 1.0, 15);
    const TimeGrid tg(1.0, 20);
    const ScalarField m0 = gaussian_density(g);
    const EvolutiveResult res = osmfg_continuation(CostOperator::constant(ScalarField(g, -1.0)),
                                                   ObstacleOperator::zero(tg, g), m0, tg, {1e-1, 1e-3});
    REQUIRE(res.limit_solved);
    CHECK(sup_distance(res.solution.m, detail::heat_flow(m0, tg)) <= 1e-12);
    const FieldTrajectory expect = dense_backward_heat(FieldTrajectory(tg, g, 1.0), ScalarField(g));
    CHECK(sup_distance(res.solution.u, expect) <= 1e-12);
    CHECK(res.report.contact_nodes == 0);
    for (std::size_t k = 0; k + 1 < res.solution.u.n_slices(); ++k) CHECK(res.solution.u[k].max() < 0.0);
}

TEST_CASE("zero initial density stays zero") {
    const Scenario s = scenario_standard("evolutive_psi0");
    const EvolutiveResult res =
        osmfg_continuation(s.cost, *s.obstacle, ScalarField(s.grid), *s.timegrid, geometric_schedule(0.1, 0.1, 3));
    CHECK(res.solution.m.max_abs() == 0.0);
    CHECK(res.report.max_residual() <= 1e-9);
}

TEST_CASE("continuation solutions satisfy the structural invariants") {
    for (const char* name : {"evolutive_psi0", "evolutive_heat_g"}) {
        CAPTURE(name);
        const Scenario s = scenario_standard(name);
        const EvolutiveResult res =
            osmfg_continuation(s.cost, *s.obstacle, *s.m0, *s.timegrid, geometric_schedule(0.1, 0.1, 6));
        REQUIRE(res.limit_solved);
        const EvolutiveMixedReport& r = res.report;
        CHECK(r.max_residual() <= 1e-8);
        CHECK(r.r_duality <= 1e-8);
        CHECK(r.max_mass_increase <= 1e-12);
        const FieldTrajectory& m = res.solution.m;
        for (std::size_t k = 1; k < m.n_slices(); ++k) {
            CHECK(m[k].min() >= -1e-12);
            CHECK(mass(m[k]) <= mass(m[k - 1]) + 1e-12);
        }
        const FieldTrajectory fr = forward_residual(m, std::nullopt);
        for (std::size_t k = 1; k < fr.n_slices(); ++k) CHECK(fr[k].max() <= 1e-9);
        const auto ev = s.obstacle->apply(m);
        for (std::size_t k = 0; k < m.n_slices(); ++k) {
            for (std::size_t i = 0; i < s.grid.size(); ++i) CHECK(res.solution.u[k][i] <= ev.psi[k][i] + 1e-10);
        }
        const EvolutiveMixedReport again = verify_mixed_evolutive(res.solution.u, m, s.cost, *s.obstacle, *s.m0);
        CHECK(again.max_residual() == doctest::Approx(r.max_residual()).epsilon(1e-6));
    }
}

TEST_CASE("verifier flags a density that ignores the cost") {
    const Grid g = Grid::line(0.0, 1.0, 15);
    const TimeGrid tg(1.0, 20);
    const ScalarField m0 = gaussian_density(g);
    const CostOperator neg = CostOperator::constant(ScalarField(g, -1.0));
    const auto r = verify_mixed_evolutive(FieldTrajectory(tg, g), detail::heat_flow(m0, tg), neg,
                                          ObstacleOperator::zero(tg, g), m0);
    CHECK(r.r_obstacle >= 0.9);
    CHECK(r.max_residual() >= 0.9);
    const auto wrong_start = verify_mixed_evolutive(FieldTrajectory(tg, g), FieldTrajectory(tg, g),
                                                    CostOperator::constant(ScalarField(g, 1.0)),
                                                    ObstacleOperator::zero(tg, g), m0);
    CHECK(wrong_start.r_initial == doctest::Approx(m0.max_abs()));
}

TEST_CASE("uniqueness probe") {
    const Scenario s = scenario_standard("evolutive_psi0");
    CHECK(evolutive_uniqueness_probe(s.cost, *s.obstacle, *s.m0, *s.timegrid, consecutive_seeds(1, 3)) <= 1e-4);
    CHECK(evolutive_uniqueness_probe(s.cost, *s.obstacle, *s.m0, *s.timegrid, {4, 4}) == 0.0);
}

TEST_CASE("bad input is rejected") {
    const Grid g = Grid::line(0.0, 1.0, 5);
    const TimeGrid tg(1.0, 4);
    const ScalarField m0(g, 1.0);
    const CostOperator cost = CostOperator::constant(ScalarField(g));
    CHECK_THROWS_AS(osmfg_penalized_solve(cost, ObstacleOperator::zero(tg, g), m0, tg, -1.0), std::invalid_argument);
    CHECK_THROWS(osmfg_penalized_solve(cost, ObstacleOperator::zero(TimeGrid(1.0, 5), g), m0, tg, 0.1));
    EvolutiveSolveConfig bad;
    bad.max_iter = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

}  // TEST_SUITE
