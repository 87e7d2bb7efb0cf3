#include "mfgstop/density.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mfgstop {

void KillingData::validate() const {
    require_same_grid(alpha.grid(), active.grid(), "KillingData");
    if (!(epsilon > 0.0)) throw std::invalid_argument("killing epsilon must be positive");
    for (std::size_t i = 0; i < alpha.size(); ++i) {
        if (!(alpha[i] >= 0.0 && alpha[i] <= 1.0)) throw std::invalid_argument("alpha must lie in [0, 1]");
    }
}

ScalarField KillingData::rate() const {
    validate();
    ScalarField c(alpha.grid());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = active[i] ? alpha[i] / epsilon : 0.0;
    return c;
}

UpwindDrift UpwindDrift::zero(const Grid& grid) {
    UpwindDrift d{grid, {}, {}};
    for (int a = 0; a < grid.dim(); ++a) {
        d.back[a].assign(grid.size(), 0.0);
        d.fwd[a].assign(grid.size(), 0.0);
    }
    return d;
}

UpwindDrift UpwindDrift::from_face_velocities(const Grid& grid, const std::array<std::vector<double>, 2>& faces) {
    UpwindDrift d = zero(grid);
    const int n0 = grid.n(0);
    for (int a = 0; a < grid.dim(); ++a) {
        const std::size_t expected = a == 0 ? static_cast<std::size_t>(n0 + 1) * (grid.dim() == 2 ? grid.n(1) : 1)
                                            : static_cast<std::size_t>(n0) * (grid.n(1) + 1);
        if (faces[a].size() != expected) throw ShapeError("face velocity count does not match the grid");
        for (std::size_t node = 0; node < grid.size(); ++node) {
            const auto idx = grid.multi_index(node);
            std::size_t left = 0;
            std::size_t right = 0;
            if (a == 0) {
                left = static_cast<std::size_t>(idx[0] + (n0 + 1) * idx[1]);
                right = left + 1;
            } else {
                left = static_cast<std::size_t>(idx[0] + n0 * idx[1]);
                right = left + static_cast<std::size_t>(n0);
            }
            d.back[a][node] = std::max(faces[a][left], 0.0);
            d.fwd[a][node] = std::max(-faces[a][right], 0.0);
        }
    }
    return d;
}

UpwindDrift UpwindDrift::from_node_velocity(const Grid& grid, const std::array<std::vector<double>, 2>& velocity) {
    UpwindDrift d = zero(grid);
    for (int a = 0; a < grid.dim(); ++a) {
        if (velocity[a].size() != grid.size()) throw ShapeError("nodal velocity has wrong length");
        for (std::size_t i = 0; i < grid.size(); ++i) {
            d.back[a][i] = std::max(velocity[a][i], 0.0);
            d.fwd[a][i] = std::max(-velocity[a][i], 0.0);
        }
    }
    return d;
}

bool UpwindDrift::is_zero() const {
    for (int a = 0; a < grid.dim(); ++a) {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (back[a][i] != 0.0 || fwd[a][i] != 0.0) return false;
        }
    }
    return true;
}

std::array<std::vector<double>, 2> UpwindDrift::node_velocity() const {
    std::array<std::vector<double>, 2> v;
    for (int a = 0; a < grid.dim(); ++a) {
        v[a].resize(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) v[a][i] = back[a][i] - fwd[a][i];
    }
    return v;
}

void append_advection(Triplets& out, const UpwindDrift& drift, std::size_t offset, bool transpose) {
    const Grid& g = drift.grid;
    auto push = [&](std::size_t r, std::size_t c, double v) {
        if (v == 0.0) return;
        if (transpose) std::swap(r, c);
        out.emplace_back(static_cast<int>(r + offset), static_cast<int>(c + offset), v);
    };
    for (int a = 0; a < g.dim(); ++a) {
        const double inv_h = 1.0 / g.h(a);
        const std::size_t stride = a == 0 ? 1 : static_cast<std::size_t>(g.n(0));
        for (std::size_t node = 0; node < g.size(); ++node) {
            const auto idx = g.multi_index(node);
            const double b = drift.back[a][node] * inv_h;
            const double f = drift.fwd[a][node] * inv_h;
            push(node, node, b + f);
            if (idx[a] > 0) push(node, node - stride, -b);
            if (idx[a] + 1 < g.n(a)) push(node, node + stride, -f);
        }
    }
}

SpMat advection_matrix(const UpwindDrift& drift, bool transpose) {
    Triplets t;
    append_advection(t, drift, 0, transpose);
    const auto n = static_cast<Eigen::Index>(drift.grid.size());
    SpMat g(n, n);
    g.setFromTriplets(t.begin(), t.end());
    return g;
}

double mass(const ScalarField& m) {
    double s = 0.0;
    for (double v : m.values()) s += v;
    return s * m.grid().cell_volume();
}

ScalarField solve_density_on_set(const NodeMask& omega, const ScalarField& rho, bool zero_order) {
    require_same_grid(omega.grid(), rho.grid(), "solve_density_on_set");
    const Grid& g = rho.grid();
    const SpMat a = elliptic_matrix(g, zero_order ? 1.0 : 0.0);
    Triplets t;
    for (Eigen::Index col = 0; col < a.outerSize(); ++col) {
        for (SpMat::InnerIterator it(a, col); it; ++it) {
            const auto r = static_cast<std::size_t>(it.row());
            const auto c = static_cast<std::size_t>(it.col());
            // Rows outside omega become identity; columns outside omega carry m = 0.
            if (omega[r] && omega[c]) t.emplace_back(it.row(), it.col(), it.value());
        }
    }
    Vec rhs(static_cast<Eigen::Index>(g.size()));
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        if (omega[i]) {
            rhs[ii] = rho[i];
        } else {
            t.emplace_back(ii, ii, 1.0);
            rhs[ii] = 0.0;
        }
    }
    SpMat sys(a.rows(), a.cols());
    sys.setFromTriplets(t.begin(), t.end());
    return to_field(g, sparse_solve(sys, rhs));
}

ScalarField solve_density_penalized(const KillingData& killing, const ScalarField& rho, bool zero_order) {
    require_same_grid(killing.alpha.grid(), rho.grid(), "solve_density_penalized");
    const ScalarField c = killing.rate();
    const Grid& g = rho.grid();
    Triplets t;
    append_elliptic(t, g, zero_order ? 1.0 : 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (c[i] != 0.0) t.emplace_back(static_cast<int>(i), static_cast<int>(i), c[i]);
    }
    const auto n = static_cast<Eigen::Index>(g.size());
    SpMat sys(n, n);
    sys.setFromTriplets(t.begin(), t.end());
    return to_field(g, sparse_solve(sys, to_vec(rho)));
}

SubsolutionCheck check_subsolution(const ScalarField& m, const ScalarField& rho, bool zero_order, double tol) {
    require_same_grid(m.grid(), rho.grid(), "check_subsolution");
    const Grid& g = m.grid();
    SubsolutionCheck out{rho - apply_elliptic(m, zero_order), 0.0, {}, {}};
    out.min_slack = out.slack.min();
    const double vanish = 1e-14 * std::max(1.0, m.max_abs());
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (out.slack[i] >= -tol) continue;
        out.violating.push_back(i);
        const auto idx = g.multi_index(i);
        bool interface = std::abs(m[i]) <= vanish;
        for (int a = 0; a < g.dim() && !interface; ++a) {
            const std::size_t stride = a == 0 ? 1 : static_cast<std::size_t>(g.n(0));
            if (idx[a] > 0 && std::abs(m[i - stride]) <= vanish) interface = true;
            if (idx[a] + 1 < g.n(a) && std::abs(m[i + stride]) <= vanish) interface = true;
        }
        if (interface) out.near_interface.push_back(i);
    }
    return out;
}

namespace {

void check_drift_shape(const std::optional<std::vector<UpwindDrift>>& drift, const TimeGrid& tg, const Grid& g) {
    if (!drift) return;
    if (drift->size() != static_cast<std::size_t>(tg.n_steps() + 1)) {
        throw ShapeError("drift trajectory must have one entry per time slice");
    }
    for (const auto& d : *drift) require_same_grid(d.grid, g, "drift");
}

}  // namespace

FieldTrajectory solve_density_parabolic(const ScalarField& m0, const FieldTrajectory& killing_rates,
                                        const std::optional<std::vector<UpwindDrift>>& drift,
                                        const TimeGrid& timegrid) {
    const Grid& g = m0.grid();
    require_same_grid(g, killing_rates.grid(), "solve_density_parabolic");
    if (!(killing_rates.timegrid() == timegrid)) throw ShapeError("killing trajectory time grid differs");
    check_drift_shape(drift, timegrid, g);
    for (double v : m0.values()) {
        if (v < 0.0) throw std::invalid_argument("initial density must be nonnegative");
    }
    const double dt = timegrid.dt();
    const auto n = static_cast<Eigen::Index>(g.size());
    FieldTrajectory m(timegrid, g);
    m[0] = m0;
    for (int k = 1; k <= timegrid.n_steps(); ++k) {
        Triplets t;
        append_elliptic(t, g, 1.0 / dt);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double c = killing_rates[k][i];
            if (c < 0.0) throw std::invalid_argument("killing rate must be nonnegative");
            if (c != 0.0) t.emplace_back(static_cast<int>(i), static_cast<int>(i), c);
        }
        if (drift) append_advection(t, (*drift)[k], 0, true);
        SpMat sys(n, n);
        sys.setFromTriplets(t.begin(), t.end());
        m[k] = to_field(g, sparse_solve(sys, to_vec(m[k - 1]) / dt));
    }
    return m;
}

FieldTrajectory forward_residual(const FieldTrajectory& m, const std::optional<std::vector<UpwindDrift>>& drift) {
    const TimeGrid& tg = m.timegrid();
    const Grid& g = m.grid();
    check_drift_shape(drift, tg, g);
    const double dt = tg.dt();
    FieldTrajectory r(tg, g);
    for (int k = 1; k <= tg.n_steps(); ++k) {
        Vec v = (to_vec(m[k]) - to_vec(m[k - 1])) / dt + to_vec(apply_elliptic(m[k], false));
        if (drift) v += advection_matrix((*drift)[k], true) * to_vec(m[k]);
        r[k] = to_field(g, v);
    }
    return r;
}

}  // namespace mfgstop
