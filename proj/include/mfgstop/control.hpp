#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <json.hpp>

#include "mfgstop/coupled.hpp"
#include "mfgstop/cost.hpp"
#include "mfgstop/density.hpp"
#include "mfgstop/grid.hpp"

namespace mfgstop {

enum class HamiltonianKind { smoothed_norm, quadratic };

const char* to_string(HamiltonianKind kind);

using Momentum = std::array<double, 2>;

/// Radial convex Hamiltonian H(x, p) = R_x(|p|^2).
///   smoothed_norm: R_x(s) = beta(x) (sqrt(1 + s) - 1), beta >= 0, globally Lipschitz in p.
///   quadratic:     R_x(s) = s / 2. Not globally Lipschitz, so it must be requested
///                  explicitly with allow_outside_assumptions.
class Hamiltonian {
public:
    static Hamiltonian smoothed_norm(ScalarField beta);
    static Hamiltonian zero(const Grid& grid);
    static Hamiltonian quadratic(const Grid& grid, bool allow_outside_assumptions);

    HamiltonianKind kind() const { return kind_; }
    const Grid& grid() const { return beta_.grid(); }
    /// Lipschitz constant field (smoothed_norm only; ones for quadratic).
    const ScalarField& beta() const { return beta_; }
    bool outside_assumptions() const { return kind_ == HamiltonianKind::quadratic; }
    bool is_zero() const;

    double radial(std::size_t node, double s) const;
    double radial_derivative(std::size_t node, double s) const;
    double radial_second_derivative(std::size_t node, double s) const;

    double operator()(std::size_t node, const Momentum& p) const;
    Momentum gradient(std::size_t node, const Momentum& p) const;

private:
    Hamiltonian(HamiltonianKind kind, ScalarField beta) : kind_(kind), beta_(std::move(beta)) {}
    HamiltonianKind kind_;
    ScalarField beta_;
};

/// Upwind (Rouy-Tourin) discrete Hamiltonian
///   H_h(v)_i = R_i( sum_axes max(D^- v, 0)^2 + min(D^+ v, 0)^2 ),
/// with zero Dirichlet neighbours outside the grid.
ScalarField discrete_hamiltonian(const Hamiltonian& ham, const ScalarField& v);

/// Exact Jacobian of discrete_hamiltonian at v as an upwind drift:
/// back = 2 R' max(D^- v, 0), fwd = -2 R' min(D^+ v, 0).
UpwindDrift hamiltonian_drift(const Hamiltonian& ham, const ScalarField& v);

struct ControlSolveConfig {
    double tol = 1e-10;
    int max_iter = 300;
    /// Outer iterations of the frozen-Hamiltonian linearization.
    int max_outer = 50;
    double delta_c = -1.0;

    void validate() const;
};

/// Residuals of the controlled mixed-solution conditions. Slice k-1 of the
/// value is paired with slice k of the density, and step k uses the drift of v_{k-1}.
struct ControlMixedReport {
    double r_hjb = 0.0;                ///< |min(-u, f(m) - L u - H_h(u))|
    double r_continuation = 0.0;       ///< drifted forward residual on {u < -delta_c}
    double r_subsolution = 0.0;        ///< positive part of the drifted forward residual
    double r_positivity = 0.0;
    double r_contact = 0.0;            ///< |sum over contact of (f - L u - H_h(u)) m h^d dt|
    double r_contact_pointwise = 0.0;  ///< |sum over contact of (f(m) - H(x, 0)) m h^d dt|
    double r_boundary_terminal = 0.0;  ///< max(||u(T)||, ||m(0) - m0||)
    double r_ibp = 0.0;                ///< |sum <(L + G) u, m> h^d dt - <u(0), m0>|
    double classical_residual = 0.0;
    double max_mass_increase = 0.0;
    double delta_c = 0.0;
    std::size_t contact_nodes = 0;

    /// Largest of the gated residuals (r_ibp is a diagnostic and excluded).
    double max_residual() const;
    nlohmann::json to_json() const;
};

struct ControlTriple {
    FieldTrajectory u;
    FieldTrajectory m;
    FieldTrajectory alpha;          ///< slice k-1 holds the stopping intensity of step k
    FieldTrajectory killing_rate;   ///< slice k holds the killing rate of step k
    std::vector<UpwindDrift> drift;  ///< drift[k] used on step k; drift[0] is zero
    double epsilon = 0.0;
    int iterations = 0;
    int outer_iterations = 0;
    std::vector<double> residual_history;
    std::vector<NodeState> states;
};

struct ControlStage {
    double epsilon = 0.0;
    int iterations = 0;
    int outer_iterations = 0;
    ControlMixedReport report;
};

struct ControlResult {
    ControlTriple solution;
    std::vector<ControlStage> stages;
    bool limit_solved = false;
    ControlMixedReport report;
};

/// Backward solve of -d_t u - Delta u + H(x, grad u) + (1/eps) u^+ = f(m), u(T) = 0,
/// slice by slice with semismooth Newton; eps == 0 solves max(-d_t u - Delta u + H - f, u) = 0.
/// Slice k-1 uses f(m_k). Throws ConvergenceError naming the slice on failure.
FieldTrajectory solve_hjb_obstacle(const FieldTrajectory& m, const CostOperator& cost, const Hamiltonian& ham,
                                   const TimeGrid& timegrid, double epsilon, const ControlSolveConfig& config = {});

/// Penalized controlled system at one eps (eps == 0: limit). The Hamiltonian
/// is linearized at the previous value iterate and the coupled system re-solved
/// until the value stops changing.
ControlTriple cosmfg_penalized_solve(const CostOperator& cost, const Hamiltonian& ham, const ScalarField& m0,
                                     const TimeGrid& timegrid, double epsilon, const ControlSolveConfig& config = {},
                                     const ControlTriple* warm = nullptr);

ControlResult cosmfg_coupled_solve(const CostOperator& cost, const Hamiltonian& ham, const ScalarField& m0,
                                   const TimeGrid& timegrid, const std::vector<double>& schedule,
                                   const ControlSolveConfig& config = {},
                                   const std::optional<FieldTrajectory>& m_init = std::nullopt,
                                   bool solve_limit = true);

ControlMixedReport verify_cosmfg(const FieldTrajectory& u, const FieldTrajectory& m, const CostOperator& cost,
                                 const Hamiltonian& ham, const ScalarField& m0, double delta_c = -1.0);

double control_uniqueness_probe(const CostOperator& cost, const Hamiltonian& ham, const ScalarField& m0,
                                const TimeGrid& timegrid, const std::vector<std::uint64_t>& seeds,
                                const ControlSolveConfig& config = {}, int threads = 1);

inline constexpr double infinite_cost = std::numeric_limits<double>::infinity();

/// L(x, a) = sup_p (a . p - H(x, p)) by a lattice search over a box that grows
/// until the maximizer is interior, refined by damped Newton. Returns
/// infinite_cost outside the domain of L (|a| >= beta for smoothed_norm).
double fenchel_conjugate(const Hamiltonian& ham, std::size_t node, const Momentum& a);

/// Closed form of the conjugate: beta (1 - sqrt(1 - |a/beta|^2)) or |a|^2 / 2.
double fenchel_conjugate_exact(const Hamiltonian& ham, std::size_t node, const Momentum& a);

/// Speed of an upwind drift at a node: sqrt(sum_axes back^2 + fwd^2).
double drift_speed(const UpwindDrift& drift, std::size_t node);

/// sum_k sum_i (F(m) - H(x, 0) m + L(x, |b|) m) h^d dt over steps k = 1..N,
/// with |b| the upwind speed of drift[k]. The pair must satisfy the drifted
/// subsolution inequality to `feasibility_tol`; otherwise std::invalid_argument
/// lists the violating slices.
double control_objective(const FieldTrajectory& m, const std::vector<UpwindDrift>& drift,
                         const PotentialOperator& potential, const Hamiltonian& ham,
                         double feasibility_tol = 1e-9);

}  // namespace mfgstop
