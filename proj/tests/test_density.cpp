#include <doctest.h>

#include <cmath>

#include "mfgstop/density.hpp"
#include "support.hpp"

using namespace mfgstop;

namespace {

NodeMask random_mask(const Grid& g, std::mt19937_64& rng, double p) {
    std::bernoulli_distribution d(p);
    NodeMask m(g);
    for (std::size_t i = 0; i < g.size(); ++i) m.set(i, d(rng));
    return m;
}

UpwindDrift random_drift(const Grid& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    std::array<std::vector<double>, 2> vel;
    for (int a = 0; a < g.dim(); ++a) {
        vel[a].resize(g.size());
        for (auto& v : vel[a]) v = d(rng);
    }
    return UpwindDrift::from_node_velocity(g, vel);
}

FieldTrajectory random_killing(const TimeGrid& tg, const Grid& g, const NodeMask& off, std::mt19937_64& rng) {
    FieldTrajectory c(tg, g);
    for (std::size_t k = 1; k < c.n_slices(); ++k) {
        c[k] = testsupport::random_field(g, rng, 0.0, 5.0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (off[i]) c[k][i] = 0.0;
        }
    }
    return c;
}

}  // namespace

TEST_SUITE("density") {

TEST_CASE("empty set gives zero density") {
    const Grid g = Grid::line(0.0, 1.0, 9);
    CHECK(solve_density_on_set(NodeMask(g), ScalarField(g, 1.0)).max_abs() == 0.0);
}

TEST_CASE("full set matches the cosh closed form at second order") {
    std::vector<double> errors;
    for (int n : {31, 63, 127}) {
        const Grid g = Grid::line(0.0, 1.0, n);
        const ScalarField m = solve_density_on_set(NodeMask(g, true), ScalarField(g, 1.0));
        double err = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = g.coord(i, 0);
            err = std::max(err, std::abs(m[i] - (1.0 - std::cosh(x - 0.5) / std::cosh(0.5))));
        }
        errors.push_back(err);
    }
    for (std::size_t j = 1; j < errors.size(); ++j) CHECK(std::log2(errors[j - 1] / errors[j]) >= 1.9);
}

TEST_CASE("restricted solve matches a dense restricted system") {
    const Grid g = Grid::line(0.0, 1.0, 20);
    NodeMask left(g);
    for (std::size_t i = 0; i < g.size() / 2; ++i) left.set(i, true);
    const ScalarField rho(g, 1.0);
    Eigen::MatrixXd a = testsupport::dense_elliptic(g, 1.0);
    Eigen::VectorXd b = testsupport::vec(rho);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (left[i]) continue;
        a.row(static_cast<Eigen::Index>(i)).setZero();
        a(i, i) = 1.0;
        b(i) = 0.0;
    }
    const Eigen::VectorXd expect = a.lu().solve(b);
    CHECK((testsupport::vec(solve_density_on_set(left, rho)) - expect).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("killing reduces to the exclusion-set solve as eps vanishes") {
    std::mt19937_64 rng(12);
    const Grid g = Grid::square(0.0, 1.0, 8, 8);
    const ScalarField rho = testsupport::random_field(g, rng, 0.0, 1.0);
    const NodeMask active = random_mask(g, rng, 0.4);
    const ScalarField limit = solve_density_on_set(active.complement(), rho);

    const ScalarField none = solve_density_penalized({ScalarField(g, 1.0), NodeMask(g), 0.1}, rho);
    CHECK(sup_distance(none, solve_density_on_set(NodeMask(g, true), rho)) <= 1e-13);
    const ScalarField idle = solve_density_penalized({ScalarField(g), active, 0.1}, rho);
    CHECK(sup_distance(idle, solve_density_on_set(NodeMask(g, true), rho)) <= 1e-13);

    double prev = INFINITY;
    for (double eps = 1e-1; eps > 5e-7; eps /= 10.0) {
        const double gap = sup_distance(solve_density_penalized({ScalarField(g, 1.0), active, eps}, rho), limit);
        CHECK(gap < prev);
        prev = gap;
    }
    CHECK(prev <= 1e-5);
}

TEST_CASE("raising the killing rate never raises the density") {
    std::mt19937_64 rng(13);
    const Grid g = Grid::line(0.0, 1.0, 25);
    const ScalarField rho = testsupport::random_field(g, rng, 0.0, 1.0);
    const NodeMask active = random_mask(g, rng, 0.5);
    const ScalarField alpha = testsupport::random_field(g, rng, 0.0, 1.0);
    ScalarField alpha_up = alpha;
    for (std::size_t i = 0; i < g.size(); ++i) alpha_up[i] = std::min(alpha[i] + 0.5, 1.0);
    const ScalarField lo = solve_density_penalized({alpha_up, active, 0.01}, rho);
    const ScalarField hi = solve_density_penalized({alpha, active, 0.01}, rho);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(lo[i] <= hi[i] + 1e-15);
    CHECK(lo.min() >= 0.0);
}

TEST_CASE("subsolution slack") {
    std::mt19937_64 rng(14);
    const Grid g = Grid::square(0.0, 1.0, 9, 9);
    for (int trial = 0; trial < 5; ++trial) {
        const ScalarField rho = testsupport::random_field(g, rng, 0.0, 1.0);
        const ScalarField m = solve_density_on_set(random_mask(g, rng, 0.6), rho);
        CHECK(check_subsolution(m, rho).min_slack >= -1e-12);
        CHECK(m.min() >= -1e-12);
    }
    const ScalarField rho(g, 1.0);
    const auto zero = check_subsolution(ScalarField(g), rho);
    CHECK(sup_distance(zero.slack, rho) == 0.0);
    const ScalarField twice = 2.0 * solve_density_on_set(NodeMask(g, true), rho);
    const auto over = check_subsolution(twice, rho);
    CHECK(over.min_slack < -0.5);
    CHECK_FALSE(over.violating.empty());
}

TEST_CASE("discrete duality inequality against negative test fields") {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        const Grid g = trial % 2 ? Grid::line(0.0, 1.0, 17) : Grid::square(0.0, 1.0, 6, 7);
        const ScalarField rho = testsupport::random_field(g, rng, 0.0, 1.0);
        const NodeMask omega = random_mask(g, rng, 0.5);
        const ScalarField m = solve_density_on_set(omega, rho);
        ScalarField u = testsupport::random_field(g, rng, -1.0, 0.0);
        CHECK(inner(apply_elliptic(u), m) - inner(u, rho) >= -1e-9);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!omega[i]) u[i] = 0.0;
        }
        CHECK(std::abs(inner(apply_elliptic(u), m) - inner(u, rho)) <= 1e-9);
    }
}

TEST_CASE("heat flow loses mass only through the boundary") {
    const Grid g = Grid::line(0.0, 1.0, 21);
    const TimeGrid tg(1.0, 20);
    const ScalarField m0 = ScalarField::from_function(g, [](double x, double) { return std::sin(M_PI * x); });
    const FieldTrajectory m = solve_density_parabolic(m0, FieldTrajectory(tg, g), std::nullopt, tg);
    for (std::size_t k = 1; k < m.n_slices(); ++k) {
        CHECK(mass(m[k]) <= mass(m[k - 1]));
        CHECK(m[k].min() >= -1e-12);
    }
    std::vector<UpwindDrift> zero(tg.n_steps() + 1, UpwindDrift::zero(g));
    const FieldTrajectory same = solve_density_parabolic(m0, FieldTrajectory(tg, g), zero, tg);
    CHECK(sup_distance(same, m) <= 1e-15);
}

TEST_CASE("strong killing empties the density in one step") {
    const Grid g = Grid::line(0.0, 1.0, 15);
    const TimeGrid tg(1.0, 10);
    const ScalarField m0(g, 1.0);
    const FieldTrajectory m = solve_density_parabolic(m0, FieldTrajectory(tg, g, 1e8), std::nullopt, tg);
    CHECK(m[1].max_abs() <= 1e-6 * m0.max_abs());
}

TEST_CASE("drifted flow stays nonnegative and mass nonincreasing") {
    std::mt19937_64 rng(16);
    const Grid g = Grid::square(0.0, 1.0, 7, 6);
    const TimeGrid tg(0.5, 10);
    std::vector<UpwindDrift> drift;
    for (int k = 0; k <= tg.n_steps(); ++k) drift.push_back(random_drift(g, rng));
    const ScalarField m0 = testsupport::random_field(g, rng, 0.0, 1.0);
    const FieldTrajectory m = solve_density_parabolic(m0, FieldTrajectory(tg, g), drift, tg);
    for (std::size_t k = 1; k < m.n_slices(); ++k) {
        CHECK(m[k].min() >= -1e-12);
        CHECK(mass(m[k]) <= mass(m[k - 1]) + 1e-14);
    }
}

TEST_CASE("parabolic duality inequality with killing and drift") {
    std::mt19937_64 rng(18);
    const Grid g = Grid::line(0.0, 1.0, 12);
    const TimeGrid tg(1.0, 8);
    const double dt = tg.dt();
    for (int trial = 0; trial < 10; ++trial) {
        const NodeMask free_set = random_mask(g, rng, 0.5);
        const FieldTrajectory c = random_killing(tg, g, free_set, rng);
        std::vector<UpwindDrift> drift;
        for (int k = 0; k <= tg.n_steps(); ++k) drift.push_back(random_drift(g, rng));
        const ScalarField m0 = testsupport::random_field(g, rng, 0.0, 1.0);
        const FieldTrajectory m = solve_density_parabolic(m0, c, drift, tg);

        auto pairing = [&](const FieldTrajectory& v) {
            double sum = 0.0;
            for (int k = 1; k <= tg.n_steps(); ++k) {
                const Eigen::VectorXd gv = advection_matrix(drift[k]) * testsupport::vec(v[k - 1]);
                ScalarField lv = (1.0 / dt) * (v[k - 1] - v[k]) + apply_elliptic(v[k - 1], false);
                lv += testsupport::field(g, gv);
                sum += inner(lv, m[k]) * dt;
            }
            return sum - inner(v[0], m0);
        };

        FieldTrajectory v(tg, g);
        for (int k = 0; k < tg.n_steps(); ++k) v[k] = testsupport::random_field(g, rng, -1.0, 0.0);
        CHECK(pairing(v) >= -1e-10);
        for (int k = 0; k < tg.n_steps(); ++k) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (!free_set[i]) v[k][i] = 0.0;
            }
        }
        CHECK(std::abs(pairing(v)) <= 1e-10);
    }
}

}  // TEST_SUITE
