#include <doctest.h>

#include <cmath>

#include "mfgstop/cost.hpp"
#include "support.hpp"

using namespace mfgstop;

namespace {

double pairing(const CostOperator& f, const ScalarField& m1, const ScalarField& m2) {
    return inner(f(m1) - f(m2), m1 - m2);
}

}  // namespace

TEST_SUITE("cost") {

TEST_CASE("local power values") {
    const Grid g = Grid::line(0.0, 1.0, 4);
    const ScalarField f0(g, {0.1, -0.2, 0.3, 0.0});
    const CostOperator f = CostOperator::local_power(2.0, 1.5, f0);
    const ScalarField m(g, {0.0, 1.0, 4.0, 0.25});
    const ScalarField v = f(m);
    CHECK(v[0] == doctest::Approx(0.1));
    CHECK(v[1] == doctest::Approx(1.8));
    CHECK(v[2] == doctest::Approx(16.3));
    CHECK(v[3] == doctest::Approx(0.25));
    CHECK(f.monotonicity() == Monotonicity::strict_monotone);
    CHECK(f.is_local());
}

TEST_CASE("nonlocal affine values") {
    const Grid g = Grid::line(0.0, 1.0, 3);
    const ScalarField w(g, {1.0, 2.0, 3.0});
    const CostOperator f = CostOperator::nonlocal_affine(ScalarField(g, 1.0), -0.5, w);
    const ScalarField m(g, {1.0, 1.0, 1.0});
    const double e = 0.25 * (1.0 + 2.0 + 3.0);
    CHECK(f(m)[1] == doctest::Approx(1.0 - 0.5 * e));
    CHECK(f.monotonicity() == Monotonicity::anti_monotone);
    CHECK_FALSE(f.is_local());
    CHECK_THROWS_AS(PotentialOperator::from_cost(f), std::invalid_argument);
}

TEST_CASE("jacobian matches finite differences") {
    std::mt19937_64 rng(40);
    const Grid g = Grid::line(0.0, 1.0, 6);
    const ScalarField f0 = testsupport::random_field(g, rng, -1.0, 1.0);
    const ScalarField w = testsupport::random_field(g, rng, 0.0, 1.0);
    for (const CostOperator& f : {CostOperator::local_power(1.3, 2.0, f0), CostOperator::nonlocal_affine(f0, 0.7, w),
                                  CostOperator::local_affine_shifted(f0, w)}) {
        const ScalarField m = testsupport::random_field(g, rng, 0.1, 1.0);
        const Eigen::MatrixXd jac = Eigen::MatrixXd(f.jacobian(m));
        const double step = 1e-6;
        for (std::size_t j = 0; j < g.size(); ++j) {
            ScalarField mp = m, mm = m;
            mp[j] += step;
            mm[j] -= step;
            const ScalarField col = (0.5 / step) * (f(mp) - f(mm));
            for (std::size_t i = 0; i < g.size(); ++i) CHECK(jac(i, j) == doctest::Approx(col[i]).epsilon(1e-6));
        }
    }
}

TEST_CASE("monotonicity tags agree with sampled pairings") {
    std::mt19937_64 rng(41);
    const Grid g = Grid::square(0.0, 1.0, 5, 5);
    const ScalarField f0 = testsupport::random_field(g, rng, -1.0, 1.0);
    const CostOperator strict = CostOperator::local_power(1.0, 2.0, f0);
    const CostOperator anti = CostOperator::nonlocal_affine(f0, -1.0, testsupport::random_field(g, rng, 0.0, 1.0));
    for (int trial = 0; trial < 50; ++trial) {
        const ScalarField m1 = testsupport::random_field(g, rng, 0.0, 2.0);
        const ScalarField m2 = testsupport::random_field(g, rng, 0.0, 2.0);
        CHECK(pairing(strict, m1, m2) > 0.0);
        // Order-reversing: m1 <= m2 nodewise implies f(m1) >= f(m2).
        ScalarField lo = m1, hi = m1;
        for (std::size_t i = 0; i < g.size(); ++i) hi[i] += m2[i];
        const ScalarField d = anti(lo) - anti(hi);
        CHECK(d.min() >= 0.0);
    }
}

TEST_CASE("potential is an antiderivative of the cost") {
    std::mt19937_64 rng(42);
    const Grid g = Grid::line(0.0, 1.0, 7);
    const CostOperator f = CostOperator::local_power(0.8, 1.5, testsupport::random_field(g, rng, -1.0, 1.0));
    const PotentialOperator pot = PotentialOperator::from_cost(f);
    CHECK(pot.strictly_convex());
    const ScalarField m = testsupport::random_field(g, rng, 0.1, 2.0);
    const ScalarField fm = f(m);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double step = 1e-6;
        CHECK((pot.at(i, m[i] + step) - pot.at(i, m[i] - step)) / (2 * step) == doctest::Approx(fm[i]).epsilon(1e-7));
    }
    CHECK(pot.integral(ScalarField(g)) == 0.0);
}

}  // TEST_SUITE
