#pragma once

#include <functional>
#include <vector>

#include "mfgstop/linalg.hpp"

namespace mfgstop {

/// Linearization of a coupled value/density system at an iterate (v, m):
///   u-rows:  lu v - (f + jac (m' - m)) = bu
///   m-rows:  lm m' + kill = bm
/// where v is the value measured relative to the obstacle (v <= 0 in the limit).
struct CoupledLinearization {
    SpMat lu;
    Vec bu;
    SpMat lm;
    Vec bm;
    Vec f;
    SpMat jac;
};

using CoupledAssembler = std::function<CoupledLinearization(const Vec& v, const Vec& m)>;

/// Per-node regime of the active-set iteration.
///   continuation: no killing, both equations hold.
///   stopping:     penalized: v > 0 with full killing m/eps.
///                 limit:     v = 0 and m = 0; the value equation relaxes to an inequality.
///   mixed:        v = 0, both equations hold with a free killing amount in [0, m/eps]
///                 (in the limit, any nonnegative amount).
enum class NodeState : unsigned char { continuation, stopping, mixed };

struct CoupledOptions {
    double tol = 1e-10;
    int max_iter = 300;
};

struct CoupledSolution {
    Vec v;
    Vec m;
    Vec kill;   ///< killing term per node: alpha m / eps, or the limit multiplier
    Vec alpha;  ///< stopping intensity in [0, 1]; 1 on stopping nodes
    std::vector<NodeState> states;
    int iterations = 0;
    std::vector<double> history;
    double residual = 0.0;
};

/// Solve of
///   lu v + (1/eps) v^+ = f(m) + bu,   lm m + (alpha/eps) 1{v >= 0} m = bm,
///   0 <= alpha <= 1,  v != 0 => alpha = 1,
/// for eps > 0, or of its eps -> 0 limit (complementarity form) for eps == 0.
/// A primal-dual active-set (semismooth Newton) iteration is tried first from
/// initial_states. If it cycles, a primal-dual interior-point method solves the
/// system as the optimality conditions of a program in (m, killing), and the
/// active-set iteration then polishes its regimes. The assembler is
/// re-evaluated at every iterate, so nonlinear costs are handled by Newton
/// linearization; the interior-point stage freezes the value argument at v0.
/// Throws ConvergenceError when neither stage converges.
CoupledSolution solve_coupled(const CoupledAssembler& assemble, double epsilon, const Vec& v0, const Vec& m0,
                              const std::vector<NodeState>& initial_states, const CoupledOptions& options = {});

/// Initial regimes from a value iterate: stopping where v > 0, else continuation.
std::vector<NodeState> states_from_value(const Vec& v);

/// Regimes for the eps -> 0 polish from a penalized solution: penalized
/// stopping nodes start out mixed.
std::vector<NodeState> limit_states_from(const std::vector<NodeState>& penalized);

}  // namespace mfgstop
