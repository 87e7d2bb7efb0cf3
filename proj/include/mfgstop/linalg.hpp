#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "mfgstop/grid.hpp"

namespace mfgstop {

using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

inline Vec to_vec(const ScalarField& f) { return Eigen::Map<const Vec>(f.data().data(), static_cast<Eigen::Index>(f.size())); }

inline ScalarField to_field(const Grid& grid, const Vec& v) {
    return ScalarField(grid, std::vector<double>(v.data(), v.data() + v.size()));
}

/// Appends the stencil of -Delta_h (+ c0 I) for `grid`, shifted by `offset` rows and columns.
void append_elliptic(Triplets& out, const Grid& grid, double c0, std::size_t offset = 0);

/// Sparse matrix of -Delta_h + c0 I.
SpMat elliptic_matrix(const Grid& grid, double c0);

/// Direct sparse solve; throws on factorisation failure.
Vec sparse_solve(const SpMat& a, const Vec& b);

/// Linear complementarity problem  u <= psi, B u <= b, (psi - u)(b - B u) = 0
/// for an M-matrix B, by the primal-dual active set method. Finite termination.
Vec solve_lcp_active_set(const SpMat& b_mat, const Vec& rhs, const Vec& psi, int max_iter = 500);

/// Infinity norm of min(psi - u, b - B u).
double lcp_residual(const SpMat& b_mat, const Vec& rhs, const Vec& psi, const Vec& u);

}  // namespace mfgstop
