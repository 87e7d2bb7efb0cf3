#include <doctest.h>

#include <array>
#include <sstream>

#include "mfgstop/grid.hpp"
#include "support.hpp"

using namespace mfgstop;

TEST_SUITE("grid") {

TEST_CASE("uniform line grid spacing and coordinates") {
    const Grid g = Grid::line(0.0, 1.0, 3);
    CHECK(g.size() == 3);
    CHECK(g.h(0) == doctest::Approx(0.25));
    CHECK(g.coord(0, 0) == doctest::Approx(0.25));
    CHECK(g.coord(1, 0) == doctest::Approx(0.5));
    CHECK(g.coord(2, 0) == doctest::Approx(0.75));
}

TEST_CASE("square grid counts nodes and orders axis 0 fastest") {
    const Grid g = Grid::square(0.0, 1.0, 4, 4);
    CHECK(g.size() == 16);
    CHECK(g.flat_index(1, 2) == 9);
    CHECK(g.multi_index(9) == std::array<int, 2>{1, 2});
    CHECK(g.cell_volume() == doctest::Approx(0.04));
}

TEST_CASE("grids need at least three interior nodes per axis") {
    CHECK_THROWS_AS(Grid::line(0.0, 1.0, 2), std::invalid_argument);
    CHECK_THROWS_AS(Grid::line(1.0, 0.0, 5), std::invalid_argument);
}

TEST_CASE("elliptic stencil arithmetic") {
    const Grid g = Grid::line(0.0, 1.0, 3);
    const ScalarField zero(g);
    CHECK(apply_elliptic(zero).max_abs() == 0.0);
    const ScalarField e(g, {0.0, 1.0, 0.0});
    const ScalarField a = apply_elliptic(e);
    CHECK(a[0] == doctest::Approx(-16.0));
    CHECK(a[1] == doctest::Approx(33.0));
    CHECK(a[2] == doctest::Approx(-16.0));
}

TEST_CASE("elliptic operator matches the dense stencil and is positive definite") {
    std::mt19937_64 rng(11);
    for (const Grid& g : {Grid::line(0.0, 1.0, 5), Grid::square(0.0, 2.0, 4, 3)}) {
        const Eigen::MatrixXd a = testsupport::dense_elliptic(g, 1.0);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
        CHECK(eig.eigenvalues().minCoeff() > 0.0);
        for (int trial = 0; trial < 10; ++trial) {
            const ScalarField m = testsupport::random_field(g, rng, -1.0, 1.0);
            const Eigen::VectorXd dense = a * testsupport::vec(m);
            CHECK((testsupport::vec(apply_elliptic(m)) - dense).lpNorm<Eigen::Infinity>() <= 1e-10);
            CHECK(inner(apply_elliptic(m), m) > 0.0);
        }
    }
}

TEST_CASE("inner product quadrature and symmetry") {
    const Grid g = Grid::line(0.0, 1.0, 3);
    CHECK(inner(ScalarField(g, 1.0), ScalarField(g, 1.0)) == doctest::Approx(0.75));
    std::mt19937_64 rng(5);
    const Grid g4 = Grid::line(0.0, 1.0, 4);
    for (int trial = 0; trial < 20; ++trial) {
        const ScalarField u = testsupport::random_field(g4, rng, -1.0, 1.0);
        const ScalarField m = testsupport::random_field(g4, rng, -1.0, 1.0);
        CHECK(inner(u, m) == doctest::Approx(inner(m, u)).epsilon(1e-15));
        CHECK(std::abs(inner(apply_elliptic(u), m) - inner(u, apply_elliptic(m))) <= 1e-12);
    }
}

TEST_CASE("discrete maximum principle") {
    std::mt19937_64 rng(9);
    const Grid g = Grid::square(0.0, 1.0, 5, 5);
    const Eigen::MatrixXd a = testsupport::dense_elliptic(g, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        const ScalarField rho = testsupport::random_field(g, rng, 0.0, 1.0);
        const Eigen::VectorXd m = a.ldlt().solve(testsupport::vec(rho));
        CHECK(m.minCoeff() >= 0.0);
    }
}

TEST_CASE("node classification") {
    const Grid g = Grid::line(0.0, 1.0, 3);
    const ScalarField psi(g);
    auto c = classify_nodes(ScalarField(g, -1.0), psi, 1e-8);
    CHECK(c.continuation.count() == 3);
    c = classify_nodes(psi, psi, 1e-8);
    CHECK(c.contact.count() == 3);
    c = classify_nodes(ScalarField(g, {-1.0, -1e-9, 0.0}), psi, 1e-8);
    CHECK(c.continuation[0]);
    CHECK_FALSE(c.continuation[1]);
    CHECK_FALSE(c.continuation[2]);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const ScalarField u = testsupport::random_field(g, rng, -1e-7, 1e-7);
        const auto p = classify_nodes(u, psi, 1e-8);
        CHECK(p.contact == p.continuation.complement());
    }
}

TEST_CASE("default contact threshold") {
    const Grid g = Grid::line(0.0, 1.0, 3);
    CHECK(default_contact_threshold(ScalarField(g, -2.0), ScalarField(g)) == doctest::Approx(2e-8));
    CHECK(default_contact_threshold(ScalarField(g), ScalarField(g)) == 1e-12);
}

TEST_CASE("csv round trip is exact and shape checked") {
    std::mt19937_64 rng(1);
    const Grid g = Grid::square(0.0, 1.0, 3, 4);
    const ScalarField f = testsupport::random_field(g, rng, -1.0, 1.0);
    std::stringstream ss;
    write_csv(ss, f);
    CHECK(read_csv(ss, g) == f);

    std::stringstream again;
    write_csv(again, f);
    CHECK_THROWS_AS(read_csv(again, Grid::square(0.0, 1.0, 4, 3)), ShapeError);
    std::stringstream empty;
    CHECK_THROWS_AS(read_csv(empty, g), ShapeError);
}

}  // TEST_SUITE
