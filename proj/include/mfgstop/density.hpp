#pragma once

#include <optional>
#include <vector>

#include "mfgstop/grid.hpp"
#include "mfgstop/linalg.hpp"

namespace mfgstop {

/// Killing potential V = alpha / eps on the active nodes, zero elsewhere.
struct KillingData {
    ScalarField alpha;
    NodeMask active;
    double epsilon;

    void validate() const;
    /// Nodewise rate c_i = alpha_i / eps on active nodes, else 0.
    ScalarField rate() const;
};

/// Upwind first-order transport coefficients on one time slice.
///
/// For a test function phi the discrete advection is
///   (G phi)_i = sum_axes back_i (phi_i - phi_{i-}) / h - fwd_i (phi_{i+} - phi_i) / h,
/// an upwind approximation of b . grad phi with back = b^+ and fwd = b^-.
/// The density equation uses the transpose G^T, which is a conservative
/// face-flux discretization of -div(m b).
struct UpwindDrift {
    Grid grid;
    std::array<std::vector<double>, 2> back;
    std::array<std::vector<double>, 2> fwd;

    static UpwindDrift zero(const Grid& grid);
    /// From face velocities. Axis a carries (n_a + 1) faces per grid line;
    /// face j of a line sits between nodes j-1 and j.
    static UpwindDrift from_face_velocities(const Grid& grid, const std::array<std::vector<double>, 2>& faces);
    /// From a nodal velocity vector field: back = b^+, fwd = b^-.
    static UpwindDrift from_node_velocity(const Grid& grid, const std::array<std::vector<double>, 2>& velocity);

    bool is_zero() const;
    /// Net nodal velocity back - fwd per axis.
    std::array<std::vector<double>, 2> node_velocity() const;
};

/// G from the UpwindDrift comment, shifted by `offset`.
void append_advection(Triplets& out, const UpwindDrift& drift, std::size_t offset = 0, bool transpose = false);
SpMat advection_matrix(const UpwindDrift& drift, bool transpose = false);

/// Total mass sum m_i h^d.
double mass(const ScalarField& m);

/// A m = rho on omega, m = 0 off omega. A includes +I iff `zero_order`.
ScalarField solve_density_on_set(const NodeMask& omega, const ScalarField& rho, bool zero_order = true);

/// (A + diag(c)) m = rho with c the killing rate.
ScalarField solve_density_penalized(const KillingData& killing, const ScalarField& rho, bool zero_order = true);

struct SubsolutionCheck {
    ScalarField slack;                 ///< rho - A m
    double min_slack = 0.0;
    std::vector<std::size_t> violating;  ///< nodes with slack < -tol
    /// Violating nodes adjacent to a node where m vanishes (interface of the support).
    std::vector<std::size_t> near_interface;
};

SubsolutionCheck check_subsolution(const ScalarField& m, const ScalarField& rho, bool zero_order = true,
                                   double tol = 1e-9);

/// Forward implicit Euler for d_t m - Delta m - div(m b) + c m = 0:
///   (I/dt + A_0 + diag(c_k) + G_k^T) m_k = m_{k-1}/dt,  k = 1..n_steps.
/// `killing_rates[k]` and `drift[k]` are used on step k (index 0 unused).
FieldTrajectory solve_density_parabolic(const ScalarField& m0, const FieldTrajectory& killing_rates,
                                        const std::optional<std::vector<UpwindDrift>>& drift,
                                        const TimeGrid& timegrid);

/// (m_k - m_{k-1})/dt + A_0 m_k + G_k^T m_k for k >= 1 (slice 0 left at zero):
/// the discrete forward operator whose sign encodes the subsolution property.
FieldTrajectory forward_residual(const FieldTrajectory& m, const std::optional<std::vector<UpwindDrift>>& drift);

}  // namespace mfgstop
