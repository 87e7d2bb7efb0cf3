#pragma once

#include "mfgstop/errors.hpp"
#include "mfgstop/grid.hpp"

namespace mfgstop {

struct ObstacleSolveConfig {
    double tol = 1e-10;
    int max_iter = 100000;
    /// Over-relaxation factor of projected SOR, in (0, 2).
    double relaxation = 1.5;
    /// Include the +u term of the stationary operator (-Delta + I). The
    /// evolutive operator -d/dt - Delta has no zero-order term.
    bool zero_order = true;

    void validate() const;
};

/// ||min(psi - u, f - A u)||_inf, the complementarity residual of
/// max(A u - f, u - psi) = 0.
double obstacle_residual(const ScalarField& u, const ScalarField& f, const ScalarField& psi, bool zero_order = true);

/// max(A u - f, u - psi) = 0 by projected SOR.
ScalarField solve_obstacle_stationary(const ScalarField& f, const ScalarField& psi,
                                      const ObstacleSolveConfig& config = {});

/// Brute-force enumeration of all 2^n contact sets (n <= 16). Test oracle.
ScalarField obstacle_oracle(const ScalarField& f, const ScalarField& psi, bool zero_order = true);

/// Number of contact sets accepted by the oracle enumeration (diagnostic).
int obstacle_oracle_candidates(const ScalarField& f, const ScalarField& psi, bool zero_order = true);

/// A u + (1/eps)(u - psi)^+ = f by semismooth Newton on the penalty active set.
ScalarField solve_obstacle_penalized(const ScalarField& f, const ScalarField& psi, double epsilon,
                                     const ObstacleSolveConfig& config = {});

/// ||A u + (1/eps)(u - psi)^+ - f||_inf.
double penalized_residual(const ScalarField& u, const ScalarField& f, const ScalarField& psi, double epsilon,
                          bool zero_order = true);

/// Backward implicit Euler for max(-d_t u - Delta u - f, u - psi) = 0 with
/// u(T) = psi(T). Slice k solves max(B u_k - u_{k+1}/dt - f_k, u_k - psi_k) = 0
/// with B = I/dt - Delta_h (+ I when config.zero_order is set).
FieldTrajectory solve_obstacle_parabolic(const FieldTrajectory& f_traj, const FieldTrajectory& psi_traj,
                                         const ScalarField& terminal, const ObstacleSolveConfig& config);

}  // namespace mfgstop
