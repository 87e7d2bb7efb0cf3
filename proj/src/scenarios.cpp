#include "mfgstop/scenarios.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mfgstop/density.hpp"
#include "mfgstop/linalg.hpp"

namespace mfgstop {

const char* to_string(ProblemKind kind) {
    switch (kind) {
        case ProblemKind::sosmfg: return "sosmfg";
        case ProblemKind::osmfg: return "osmfg";
        case ProblemKind::cosmfg: return "cosmfg";
    }
    return "unknown";
}

const char* to_string(ExpectedOutcome outcome) {
    switch (outcome) {
        case ExpectedOutcome::unique_mixed: return "unique_mixed";
        case ExpectedOutcome::multiple_classical: return "multiple_classical";
        case ExpectedOutcome::no_classical_mixed_exists: return "no_classical_mixed_exists";
        case ExpectedOutcome::multiple_with_obstacle: return "multiple_with_obstacle";
    }
    return "unknown";
}

namespace {

// Position of x inside the bounds of an axis, in [0, 1].
double unit_coord(const Grid& g, int axis, double x) {
    const auto& b = g.bounds(axis);
    return (x - b.lo) / (b.hi - b.lo);
}

ScalarField solve_a(const ScalarField& rhs) {
    return to_field(rhs.grid(), sparse_solve(elliptic_matrix(rhs.grid(), 1.0), to_vec(rhs)));
}

Grid line31() { return Grid::line(0.0, 1.0, 31); }

Scenario time_dependent(const std::string& name, ProblemKind problem) {
    const Grid g = line31();
    const TimeGrid tg(1.0, 50);
    const CostOperator cost = CostOperator::local_power(1.0, 1.0, ScalarField(g, -0.5));
    Scenario s{name, problem, g, tg, cost, std::nullopt, std::nullopt, gaussian_density(g), std::nullopt,
               ExpectedOutcome::unique_mixed};
    if (name == "evolutive_heat_g") {
        s.obstacle = ObstacleOperator::heat_from_g(CostOperator::local_power(0.5, 1.0, ScalarField(g, 0.0)));
    } else {
        s.obstacle = ObstacleOperator::zero(tg, g);
    }
    if (problem == ProblemKind::cosmfg) s.hamiltonian = Hamiltonian::smoothed_norm(ScalarField(g, 1.0));
    return s;
}

}  // namespace

ScalarField raised_cosine_bump(const Grid& grid) {
    return ScalarField::from_function(grid, [&](double x, double y) {
        double v = 1.0;
        const double c[2] = {x, y};
        for (int a = 0; a < grid.dim(); ++a) {
            const double t = unit_coord(grid, a, c[a]);
            if (t <= 1.0 / 3.0 || t >= 2.0 / 3.0) return 0.0;
            v *= 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * (3.0 * t - 1.0)));
        }
        return v;
    });
}

ScalarField gaussian_density(const Grid& grid, double variance) {
    if (!(variance > 0.0)) throw std::invalid_argument("variance must be positive");
    ScalarField m = ScalarField::from_function(grid, [&](double x, double y) {
        const double c[2] = {x, y};
        double r2 = 0.0;
        for (int a = 0; a < grid.dim(); ++a) {
            const auto& b = grid.bounds(a);
            const double d = c[a] - 0.5 * (b.lo + b.hi);
            r2 += d * d;
        }
        return std::exp(-r2 / (2.0 * variance));
    });
    m *= 1.0 / mass(m);
    return m;
}

std::vector<std::string> scenario_names() {
    return {"monotone_1d", "monotone_2d", "anti_monotone_1d", "evolutive_psi0", "evolutive_heat_g",
            "control_smoothnorm"};
}

Scenario scenario_standard(const std::string& name) {
    if (name == "monotone_1d" || name == "monotone_2d") {
        const Grid g = name == "monotone_1d" ? line31() : Grid::square(0.0, 1.0, 31, 31);
        return Scenario{name,
                        ProblemKind::sosmfg,
                        g,
                        std::nullopt,
                        CostOperator::local_power(1.0, 1.0, ScalarField(g, -0.5)),
                        std::nullopt,
                        raised_cosine_bump(g),
                        std::nullopt,
                        std::nullopt,
                        ExpectedOutcome::unique_mixed};
    }
    if (name == "anti_monotone_1d") {
        const Grid g = line31();
        const ScalarField c0 = ScalarField::from_function(
            g, [](double x, double) { return 0.2 + 0.6 * std::cos(2.0 * std::numbers::pi * x); });
        return Scenario{name,
                        ProblemKind::sosmfg,
                        g,
                        std::nullopt,
                        CostOperator::nonlocal_affine(c0, -0.5, ScalarField(g, 1.0)),
                        std::nullopt,
                        raised_cosine_bump(g),
                        std::nullopt,
                        std::nullopt,
                        ExpectedOutcome::multiple_classical};
    }
    if (name == "evolutive_psi0" || name == "evolutive_heat_g") return time_dependent(name, ProblemKind::osmfg);
    if (name == "control_smoothnorm") return time_dependent(name, ProblemKind::cosmfg);
    throw std::invalid_argument("unknown scenario '" + name + "'");
}

NonuniquenessEvidence scenario_nonuniqueness(int n) {
    const Grid g = Grid::line(0.0, 1.0, n);
    const ScalarField rho = raised_cosine_bump(g);
    const ScalarField m_star = solve_a(rho);
    const ScalarField w = ScalarField::from_function(g, [](double x, double) { return std::abs(x - 0.5); });
    const double e_star = inner(w, m_star);
    const CostOperator cost = CostOperator::nonlocal_affine(ScalarField(g, 1.0), -2.0 / e_star, w);
    const ScalarField u_star = solve_a(cost(m_star));
    if (u_star.max() >= -1e-12) {
        throw std::runtime_error("nonuniqueness scenario: u* touches zero; refine the grid");
    }
    NonuniquenessEvidence ev{Scenario{"nonuniqueness", ProblemKind::sosmfg, g, std::nullopt, cost, std::nullopt, rho,
                                      std::nullopt, std::nullopt, ExpectedOutcome::multiple_classical},
                             m_star,
                             u_star,
                             sup_distance(cost(m_star), ScalarField(g, -1.0)),
                             sup_distance(cost(ScalarField(g)), ScalarField(g, 1.0)),
                             verify_mixed(ScalarField(g), ScalarField(g), cost, rho),
                             verify_mixed(u_star, m_star, cost, rho),
                             m_star.max_abs()};
    return ev;
}

NonexistenceEvidence scenario_nonexistence(bool ball, int n) {
    if (n % 2 == 0) throw std::invalid_argument("nonexistence scenario needs a node at the centre (odd n)");
    const Grid g = Grid::line(0.0, 1.0, n);
    const double x0 = 0.5;
    const double width = 0.1;
    const double ball_radius = ball ? 2.5 * g.h(0) : 0.0;
    const ScalarField rho = raised_cosine_bump(g);
    const ScalarField m_star = solve_a(rho);
    const ScalarField u_star = ScalarField::from_function(g, [&](double x, double) {
        const double d = std::max(std::abs(x - x0) - ball_radius, 0.0) / width;
        return -std::sin(std::numbers::pi * x) * (1.0 - std::exp(-d * d));
    });
    const ScalarField base = apply_elliptic(u_star, true);
    const CostOperator cost = CostOperator::local_affine_shifted(base, m_star);

    NonexistenceEvidence ev{Scenario{ball ? "nonexistence_ball" : "nonexistence", ProblemKind::sosmfg, g,
                                     std::nullopt, cost, std::nullopt, rho, std::nullopt, std::nullopt,
                                     ExpectedOutcome::no_classical_mixed_exists},
                            u_star,
                            m_star,
                            sup_distance(apply_elliptic(u_star, true), cost(m_star)),
                            continuation_solve(cost, rho, geometric_schedule()),
                            {},
                            ball};
    for (const auto& st : ev.run.stages) {
        ev.stages.push_back({st.epsilon, st.report.classical_residual, st.report.r_contact, st.report.max_residual()});
    }
    if (ev.run.limit_solved) {
        ev.stages.push_back(
            {0.0, ev.run.report.classical_residual, ev.run.report.r_contact, ev.run.report.max_residual()});
    }
    return ev;
}

ScalarField interpolated_obstacle(const ScalarField& m, const ScalarField& m_star, const ScalarField& u_star,
                                  const ScalarField& u_lower, double ratio_floor) {
    require_same_grid(m.grid(), m_star.grid(), "interpolated_obstacle");
    ScalarField psi(m.grid());
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m_star[i] < ratio_floor) {
            psi[i] = u_lower[i];
        } else {
            const double r = m[i] / m_star[i];
            psi[i] = r * u_star[i] + (1.0 - r) * u_lower[i];
        }
    }
    return psi;
}

ObstacleNonuniquenessEvidence scenario_obstacle_nonuniqueness(const CostOperator& cost, const ScalarField& rho) {
    if (cost.monotonicity() != Monotonicity::strict_monotone) {
        throw std::invalid_argument("obstacle nonuniqueness needs a strictly monotone cost");
    }
    const Grid& g = rho.grid();
    require_same_grid(g, cost.grid(), "scenario_obstacle_nonuniqueness");
    const ScalarField m_star = solve_a(rho);
    const ScalarField u_star = solve_a(cost(m_star));
    const ScalarField u_lower = solve_a(cost(ScalarField(g)));
    const double floor = 1e-10 * m_star.max_abs();
    std::size_t floored = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (m_star[i] < floor) {
            if (rho[i] > 0.0) {
                throw std::runtime_error("obstacle nonuniqueness: ratio floor hit where mass is injected; refine the grid");
            }
            ++floored;
        }
    }
    const ScalarField zero(g);
    const ScalarField psi_star = interpolated_obstacle(m_star, m_star, u_star, u_lower, floor);
    const ScalarField psi_zero = interpolated_obstacle(zero, m_star, u_star, u_lower, floor);
    return ObstacleNonuniquenessEvidence{
        Scenario{"obstacle_nonuniqueness", ProblemKind::sosmfg, g, std::nullopt, cost, std::nullopt, rho,
                 std::nullopt, std::nullopt, ExpectedOutcome::multiple_with_obstacle},
        m_star,
        u_star,
        u_lower,
        floor,
        floored,
        verify_mixed(u_star, m_star, cost, rho, -1.0, psi_star),
        verify_mixed(u_lower, zero, cost, rho, -1.0, psi_zero)};
}

}  // namespace mfgstop
