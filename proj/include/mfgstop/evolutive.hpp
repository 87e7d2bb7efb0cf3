#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgstop/coupled.hpp"
#include "mfgstop/cost.hpp"
#include "mfgstop/density.hpp"
#include "mfgstop/grid.hpp"

namespace mfgstop {

enum class ObstacleKind { constant_field, heat_from_g };

struct ObstacleEvaluation {
    FieldTrajectory psi;
    /// Discrete (d_t + Delta) psi. Slice k (k >= 1) is the source of the step
    /// from t_k back to t_{k-1}; slice 0 is unused and zero.
    FieldTrajectory g_psi;
};

/// Obstacle psi(m) of the time-dependent problem.
///   constant_field: a fixed trajectory.
///   heat_from_g:    d_t psi + Delta psi = g(m), psi(T) = 0, psi = 0 on the boundary,
///                   solved backward in time; the source is returned as g(m) exactly.
class ObstacleOperator {
public:
    static ObstacleOperator constant_field(FieldTrajectory psi);
    static ObstacleOperator zero(const TimeGrid& timegrid, const Grid& grid);
    static ObstacleOperator heat_from_g(CostOperator g);

    ObstacleKind kind() const { return kind_; }
    bool depends_on_m() const { return kind_ == ObstacleKind::heat_from_g; }
    const std::optional<CostOperator>& source_cost() const { return g_; }
    const std::optional<FieldTrajectory>& field() const { return psi_; }

    ObstacleEvaluation apply(const FieldTrajectory& m) const;

private:
    ObstacleKind kind_ = ObstacleKind::constant_field;
    std::optional<FieldTrajectory> psi_;
    std::optional<CostOperator> g_;
};

/// Backward heat solve of (psi_{k-1} - psi_k)/dt + A_0 psi_{k-1} = -source_k, psi_N = terminal.
FieldTrajectory backward_heat(const FieldTrajectory& source, const ScalarField& terminal);

struct EvolutiveSolveConfig {
    double tol = 1e-10;
    int max_iter = 300;
    /// Contact threshold used by reports; negative selects the default rule.
    double delta_c = -1.0;

    void validate() const;
};

/// Residuals of the time-dependent mixed-solution conditions. The value on
/// slice k-1 is paired with the density on slice k, matching the implicit steps.
struct EvolutiveMixedReport {
    double r_obstacle = 0.0;      ///< parabolic complementarity residual
    double r_continuation = 0.0;  ///< forward residual of m on {u < psi - delta_c}
    double r_subsolution = 0.0;   ///< positive part of the forward residual
    double r_positivity = 0.0;
    double r_contact = 0.0;       ///< |sum over contact of (f~ - L v) m h^d dt|
    double r_contact_pointwise = 0.0;  ///< |sum over contact of f~ m h^d dt|, f~ = f(m) + g_psi
    double r_duality = 0.0;       ///< |sum <f~, m> dt - <u(0) - psi(0), m0>|
    double r_terminal = 0.0;      ///< ||u(T) - psi(T)||_inf
    double r_initial = 0.0;       ///< ||m(0) - m0||_inf
    double classical_residual = 0.0;  ///< sum over contact of m h^d dt
    double max_mass_increase = 0.0;
    double delta_c = 0.0;
    std::size_t contact_nodes = 0;

    double max_residual() const;
    nlohmann::json to_json() const;
};

/// Pair (u, m, alpha) of the penalized time-dependent system at one epsilon.
struct EvolutiveTriple {
    FieldTrajectory u;
    FieldTrajectory m;
    FieldTrajectory alpha;  ///< slice k-1 holds the stopping intensity of the step k
    FieldTrajectory psi;
    FieldTrajectory g_psi;
    double epsilon = 0.0;
    int iterations = 0;
    std::vector<double> residual_history;
    std::vector<NodeState> states;
};

struct EvolutiveStage {
    double epsilon = 0.0;
    int iterations = 0;
    EvolutiveMixedReport report;
};

struct EvolutiveResult {
    EvolutiveTriple solution;
    std::vector<EvolutiveStage> stages;
    bool limit_solved = false;
    EvolutiveMixedReport report;
};

/// Penalized system
///   -d_t u - Delta u + (1/eps)(u - psi(m))^+ = f(m),  u(T) = psi(T),
///    d_t m - Delta m + (alpha/eps) 1{u >= psi(m)} m = 0,  m(0) = m0,
/// discretized by implicit Euler in both directions; eps == 0 solves the limit.
EvolutiveTriple osmfg_penalized_solve(const CostOperator& cost, const ObstacleOperator& obstacle,
                                      const ScalarField& m0, const TimeGrid& timegrid, double epsilon,
                                      const EvolutiveSolveConfig& config = {}, const EvolutiveTriple* warm = nullptr);

EvolutiveResult osmfg_continuation(const CostOperator& cost, const ObstacleOperator& obstacle, const ScalarField& m0,
                                   const TimeGrid& timegrid, const std::vector<double>& schedule,
                                   const EvolutiveSolveConfig& config = {},
                                   const std::optional<FieldTrajectory>& m_init = std::nullopt,
                                   bool solve_limit = true);

EvolutiveMixedReport verify_mixed_evolutive(const FieldTrajectory& u, const FieldTrajectory& m,
                                            const CostOperator& cost, const ObstacleOperator& obstacle,
                                            const ScalarField& m0, double delta_c = -1.0);

/// Heat flow of m0 with randomly scaled, perturbed slices; starting points for probes.
FieldTrajectory random_trajectory_start(const ScalarField& m0, const TimeGrid& timegrid, std::uint64_t seed);

double evolutive_uniqueness_probe(const CostOperator& cost, const ObstacleOperator& obstacle, const ScalarField& m0,
                                  const TimeGrid& timegrid, const std::vector<std::uint64_t>& seeds,
                                  const EvolutiveSolveConfig& config = {}, int threads = 1);

namespace detail {

/// Space-time operator acting on the stacked values (v_0, ..., v_{N-1}):
/// block k-1 row is (v_{k-1} - v_k)/dt + A_0 v_{k-1} (+ G_k v_{k-1}), with v_N = 0.
SpMat backward_operator(const Grid& grid, const TimeGrid& timegrid, const std::vector<UpwindDrift>* drift = nullptr);

/// Coupled assembler of the time-dependent system with value operator `lu`,
/// value source `bu`, cost f (+ g when given) and initial density m0.
CoupledAssembler evolutive_assembler(const CostOperator& cost, const std::optional<CostOperator>& gcost,
                                     const ScalarField& m0, const TimeGrid& timegrid, const SpMat& lu, const Vec& bu);

/// Heat flow of m0 without killing or drift.
FieldTrajectory heat_flow(const ScalarField& m0, const TimeGrid& timegrid);

Vec stack_slices(const FieldTrajectory& traj, int first, int count);
void unstack_slices(const Vec& v, FieldTrajectory& traj, int first);

/// Contact threshold shared by all slices: 1e-8 * max ||psi - u||, floored at 1e-12.
double trajectory_contact_threshold(const FieldTrajectory& u, const FieldTrajectory& psi);

}  // namespace detail

}  // namespace mfgstop
