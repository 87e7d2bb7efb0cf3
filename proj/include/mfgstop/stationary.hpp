#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgstop/coupled.hpp"
#include "mfgstop/cost.hpp"
#include "mfgstop/grid.hpp"

namespace mfgstop {

enum class CoupledScheme { active_set, picard };

struct StationarySolveConfig {
    /// Relative residual tolerance of the coupled equations.
    double tol = 1e-10;
    int max_iter = 300;
    CoupledScheme scheme = CoupledScheme::active_set;
    /// Fall back to damped Picard when the active-set iteration fails.
    bool picard_fallback = true;
    /// Picard: damping theta, alpha ascent step eta = alpha_step * eps, outer limits.
    double damping = 0.5;
    double alpha_step = 0.1;
    int max_outer = 20000;
    /// Contact threshold used by reports; negative selects the default rule.
    double delta_c = -1.0;

    void validate() const;
};

/// Penalized solution (u, m, alpha) at one epsilon.
struct PenalizedTriple {
    ScalarField u;
    ScalarField m;
    ScalarField alpha;
    double epsilon = 0.0;
    int iterations = 0;
    std::vector<double> residual_history;
    std::vector<NodeState> states;
    std::string scheme;
};

/// Residuals of the mixed-solution conditions for a stationary pair (u, m)
/// with obstacle psi (zero unless given).
struct MixedSolutionReport {
    double r_obstacle = 0.0;      ///< ||min(psi - u, f(m) - A u)||_inf
    double r_continuation = 0.0;  ///< ||A m - rho||_inf over {u < psi - delta_c}
    double r_subsolution = 0.0;   ///< max(A m - rho)^+
    double r_positivity = 0.0;    ///< max(-m)^+
    double r_contact = 0.0;       ///< |sum over contact of (f(m) - A u) m h^d|
    double r_contact_pointwise = 0.0;  ///< |sum over contact of (f(m) - A psi) m h^d|
    double r_duality = 0.0;       ///< |<f(m) - A psi, m> - <u - psi, rho>|
    double classical_residual = 0.0;  ///< sum over contact of m h^d
    double delta_c = 0.0;
    std::size_t contact_nodes = 0;
    int dim = 1;
    std::vector<int> n_interior;

    /// Largest of the five defining residuals (obstacle, continuation,
    /// subsolution, contact, duality) and the positivity check.
    double max_residual() const;
    nlohmann::json to_json() const;
};

MixedSolutionReport verify_mixed(const ScalarField& u, const ScalarField& m, const CostOperator& cost,
                                 const ScalarField& rho, double delta_c = -1.0,
                                 const std::optional<ScalarField>& psi = std::nullopt);

/// max(A u - f, u - psi) = 0 solved exactly by the active-set LCP method.
ScalarField solve_obstacle_exact(const ScalarField& f, const ScalarField& psi, bool zero_order = true);

/// Penalized coupled system at one epsilon > 0; epsilon == 0 solves the
/// limit complementarity system directly. `warm` provides the starting point.
PenalizedTriple penalized_coupled_solve(const CostOperator& cost, const ScalarField& rho, double epsilon,
                                        const StationarySolveConfig& config = {},
                                        const PenalizedTriple* warm = nullptr);

/// eps_j = eps0 * ratio^j for j = 0..stages-1.
std::vector<double> geometric_schedule(double eps0 = 0.1, double ratio = 0.25, int stages = 8);

struct ContinuationStage {
    double epsilon = 0.0;
    int iterations = 0;
    std::string scheme;
    /// Report of (u_eps, m_eps) with contact read off the penalized value.
    MixedSolutionReport report;
    /// Distance to the previous stage.
    double step_u = 0.0;
    double step_m = 0.0;
};

struct ContinuationResult {
    ScalarField u;
    ScalarField m;
    ScalarField alpha;
    std::vector<ContinuationStage> stages;
    /// True when the final pair comes from the eps -> 0 limit solve.
    bool limit_solved = false;
    MixedSolutionReport report;
};

/// Warm-started penalized solves along the schedule, followed by the limit
/// solve started from the last stage. `m_init` seeds the first stage.
ContinuationResult continuation_solve(const CostOperator& cost, const ScalarField& rho,
                                      const std::vector<double>& schedule, const StationarySolveConfig& config = {},
                                      const std::optional<ScalarField>& m_init = std::nullopt,
                                      bool solve_limit = true);

struct MonotoneIterationResult {
    ScalarField u;
    ScalarField m;
    int iterations = 0;
    std::vector<double> m_steps;        ///< ||m_{n+1} - m_n||_inf
    double max_m_decrease = 0.0;        ///< max over n of (m_n - m_{n+1})^+
    double max_u_increase = 0.0;        ///< max over n of (u_{n+1} - u_n)^+
};

struct MonotoneIterationConfig {
    double tol = 1e-12;
    int max_iter = 50;
    /// Allowed nodewise violation of the monotone ordering.
    double order_tol = 1e-10;
    double delta_c = -1.0;
};

/// Ordered iteration from m = 0 for order-reversing costs; converges to the
/// smallest classical solution.
MonotoneIterationResult monotone_iteration_solve(const CostOperator& cost, const ScalarField& rho,
                                                 const MonotoneIterationConfig& config = {});

struct VariationalConfig {
    double feas_tol = 1e-11;
    double grad_tol = 1e-11;
    double penalty = 10.0;
    int max_outer = 200;
    int max_inner = 200;
    std::uint64_t seed = 12345;
    int random_sets = 20;
};

struct VariationalResult {
    ScalarField m;
    /// Multiplier of A m <= rho with its sign flipped; plays the role of u.
    ScalarField u;
    double objective = 0.0;
    double feasibility = 0.0;       ///< max((A m - rho)^+, (-m)^+)
    double stationarity = 0.0;      ///< projected gradient norm
    int outer_iterations = 0;
    /// min over the feasible battery of <f(m), m' - m>.
    double euler_lagrange_min = 0.0;
    std::size_t battery_size = 0;
};

/// Minimizes sum F(x_i, m_i) h^d over {m >= 0, A m <= rho}.
VariationalResult variational_minimize(const PotentialOperator& potential, const ScalarField& rho,
                                       const VariationalConfig& config = {});

/// Fields m' with m' >= 0 and A m' <= rho: 0, A^{-1} rho, exclusion-set solves on
/// random node sets, and convex combinations of those with `m`.
std::vector<ScalarField> feasible_battery(const ScalarField& rho, const ScalarField& m, std::uint64_t seed,
                                          int random_sets);

/// Initial densities used by multi-start probes: scaled, perturbed A^{-1} rho.
ScalarField random_start(const ScalarField& rho, std::uint64_t seed);

/// Max pairwise sup-distance of the densities from continuation solves
/// started at random_start(rho, seed) for each seed.
double uniqueness_probe(const CostOperator& cost, const ScalarField& rho, const std::vector<std::uint64_t>& seeds,
                        const StationarySolveConfig& config = {}, int threads = 1);

std::vector<std::uint64_t> consecutive_seeds(std::uint64_t seed, int n_starts);

}  // namespace mfgstop
