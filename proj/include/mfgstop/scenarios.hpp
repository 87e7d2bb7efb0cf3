#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mfgstop/control.hpp"
#include "mfgstop/cost.hpp"
#include "mfgstop/evolutive.hpp"
#include "mfgstop/grid.hpp"
#include "mfgstop/stationary.hpp"

namespace mfgstop {

enum class ProblemKind { sosmfg, osmfg, cosmfg };

enum class ExpectedOutcome { unique_mixed, multiple_classical, no_classical_mixed_exists, multiple_with_obstacle };

const char* to_string(ProblemKind kind);
const char* to_string(ExpectedOutcome outcome);

/// A fully specified problem instance.
struct Scenario {
    std::string name;
    ProblemKind problem;
    Grid grid;
    std::optional<TimeGrid> timegrid;
    CostOperator cost;
    std::optional<ObstacleOperator> obstacle;  ///< time-dependent problems
    std::optional<ScalarField> rho;            ///< stationary source
    std::optional<ScalarField> m0;             ///< initial density
    std::optional<Hamiltonian> hamiltonian;
    ExpectedOutcome expected;
};

/// Raised cosine with support in the middle third of every axis and peak 1.
ScalarField raised_cosine_bump(const Grid& grid);

/// Gaussian centred in the domain with the given variance, scaled to mass 1.
ScalarField gaussian_density(const Grid& grid, double variance = 0.01);

std::vector<std::string> scenario_names();

/// Registry lookup; throws std::invalid_argument for unknown names.
Scenario scenario_standard(const std::string& name);

/// Two solutions of one stationary system with the order-reversing cost
/// f(m) = 1 - 2 E(m) / E(m*), E(m) = <|x - x_c|, m>, m* = A^{-1} rho:
/// (0, 0) and (A^{-1}(-1), m*).
struct NonuniquenessEvidence {
    Scenario scenario;
    ScalarField m_star;
    ScalarField u_star;
    double f_at_m_star_error = 0.0;  ///< ||f(m*) + 1||_inf
    double f_at_zero_error = 0.0;    ///< ||f(0) - 1||_inf
    MixedSolutionReport report_zero;
    MixedSolutionReport report_star;
    double separation = 0.0;  ///< ||m_a - m_b||_inf
};

NonuniquenessEvidence scenario_nonuniqueness(int n = 31);

struct NonexistenceStage {
    double epsilon = 0.0;  ///< 0 marks the limit solve
    double classical_residual = 0.0;
    double r_contact = 0.0;
    double max_residual = 0.0;
};

/// Strictly monotone cost f(m) = A u* + m - m* whose unique mixed solution
/// (u*, m*) keeps mass on the contact set, so no classical solution exists.
/// u* is negative and vanishes only at the centre node (or on a small ball).
struct NonexistenceEvidence {
    Scenario scenario;
    ScalarField u_star;
    ScalarField m_star;
    double base_error = 0.0;  ///< ||A u* - f(m*)||_inf
    ContinuationResult run;
    std::vector<NonexistenceStage> stages;
    bool ball = false;
};

NonexistenceEvidence scenario_nonexistence(bool ball = false, int n = 31);

/// psi(m) = u* m / m* + (1 - m / m*) u_lower, with u* = A^{-1} f(m*) and
/// u_lower = A^{-1} f(0). Nodes where m* < ratio_floor take psi = u_lower.
ScalarField interpolated_obstacle(const ScalarField& m, const ScalarField& m_star, const ScalarField& u_star,
                                  const ScalarField& u_lower, double ratio_floor);

/// Two mixed solutions (u*, m*) and (u_lower, 0) of the stationary system
/// with the m-dependent obstacle psi(m) for a strictly monotone cost.
struct ObstacleNonuniquenessEvidence {
    Scenario scenario;
    ScalarField m_star;
    ScalarField u_star;
    ScalarField u_lower;
    double ratio_floor = 0.0;
    std::size_t floored_nodes = 0;
    MixedSolutionReport report_star;
    MixedSolutionReport report_zero;
};

ObstacleNonuniquenessEvidence scenario_obstacle_nonuniqueness(const CostOperator& cost, const ScalarField& rho);

}  // namespace mfgstop
