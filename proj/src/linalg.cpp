#include "mfgstop/linalg.hpp"

#include <Eigen/SparseLU>

#include <stdexcept>

namespace mfgstop {

void append_elliptic(Triplets& out, const Grid& grid, double c0, std::size_t offset) {
    for (std::size_t node = 0; node < grid.size(); ++node) {
        const auto idx = grid.multi_index(node);
        const auto row = static_cast<int>(node + offset);
        double diag = c0;
        for (int a = 0; a < grid.dim(); ++a) {
            const double inv_h2 = 1.0 / (grid.h(a) * grid.h(a));
            const std::size_t stride = a == 0 ? 1 : static_cast<std::size_t>(grid.n(0));
            diag += 2.0 * inv_h2;
            if (idx[a] > 0) out.emplace_back(row, static_cast<int>(node - stride + offset), -inv_h2);
            if (idx[a] + 1 < grid.n(a)) out.emplace_back(row, static_cast<int>(node + stride + offset), -inv_h2);
        }
        out.emplace_back(row, row, diag);
    }
}

SpMat elliptic_matrix(const Grid& grid, double c0) {
    Triplets t;
    append_elliptic(t, grid, c0);
    SpMat a(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(grid.size()));
    a.setFromTriplets(t.begin(), t.end());
    return a;
}

Vec sparse_solve(const SpMat& a, const Vec& b) {
    Eigen::SparseLU<SpMat> lu;
    lu.analyzePattern(a);
    lu.factorize(a);
    if (lu.info() != Eigen::Success) throw std::runtime_error("sparse factorisation failed");
    Vec x = lu.solve(b);
    if (lu.info() != Eigen::Success) throw std::runtime_error("sparse solve failed");
    return x;
}

Vec solve_lcp_active_set(const SpMat& b_mat, const Vec& rhs, const Vec& psi, int max_iter) {
    const Eigen::Index n = rhs.size();
    // Start from the unconstrained solution and activate where it violates the obstacle.
    Vec u = sparse_solve(b_mat, rhs);
    std::vector<char> active(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i) active[i] = u[i] > psi[i];
    const Vec diag = b_mat.diagonal();

    for (int it = 0; it < max_iter; ++it) {
        Triplets t;
        t.reserve(static_cast<std::size_t>(b_mat.nonZeros()));
        Vec r(n);
        for (Eigen::Index col = 0; col < b_mat.outerSize(); ++col) {
            for (SpMat::InnerIterator itr(b_mat, col); itr; ++itr) {
                if (!active[itr.row()]) t.emplace_back(itr.row(), itr.col(), itr.value());
            }
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            if (active[i]) {
                t.emplace_back(i, i, 1.0);
                r[i] = psi[i];
            } else {
                r[i] = rhs[i];
            }
        }
        SpMat sys(n, n);
        sys.setFromTriplets(t.begin(), t.end());
        u = sparse_solve(sys, r);
        const Vec lambda = rhs - b_mat * u;

        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            // lambda is the multiplier on the active set, zero (up to round-off) elsewhere.
            const double l = active[i] ? lambda[i] : 0.0;
            const bool next = l + diag[i] * (u[i] - psi[i]) > 0.0;
            if (next != static_cast<bool>(active[i])) {
                active[i] = next;
                changed = true;
            }
        }
        if (!changed) return u;
    }
    throw std::runtime_error("active-set LCP solver did not settle");
}

double lcp_residual(const SpMat& b_mat, const Vec& rhs, const Vec& psi, const Vec& u) {
    const Vec slack = rhs - b_mat * u;
    double r = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) r = std::max(r, std::abs(std::min(psi[i] - u[i], slack[i])));
    return r;
}

}  // namespace mfgstop
