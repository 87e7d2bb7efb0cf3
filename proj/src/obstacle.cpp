#include "mfgstop/obstacle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "mfgstop/linalg.hpp"

namespace mfgstop {

void ObstacleSolveConfig::validate() const {
    if (!(tol > 0.0)) throw std::invalid_argument("obstacle tolerance must be positive");
    if (!(relaxation > 0.0 && relaxation < 2.0)) throw std::invalid_argument("relaxation must lie in (0, 2)");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");
}

double obstacle_residual(const ScalarField& u, const ScalarField& f, const ScalarField& psi, bool zero_order) {
    require_same_grid(u.grid(), f.grid(), "obstacle_residual");
    require_same_grid(u.grid(), psi.grid(), "obstacle_residual");
    const ScalarField au = apply_elliptic(u, zero_order);
    double r = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) r = std::max(r, std::abs(std::min(psi[i] - u[i], f[i] - au[i])));
    return r;
}

ScalarField solve_obstacle_stationary(const ScalarField& f, const ScalarField& psi, const ObstacleSolveConfig& config) {
    config.validate();
    require_same_grid(f.grid(), psi.grid(), "solve_obstacle_stationary");
    const Grid& g = f.grid();
    const double c0 = config.zero_order ? 1.0 : 0.0;
    double diag = c0;
    std::array<double, 2> inv_h2{0.0, 0.0};
    for (int a = 0; a < g.dim(); ++a) {
        inv_h2[a] = 1.0 / (g.h(a) * g.h(a));
        diag += 2.0 * inv_h2[a];
    }
    const std::size_t n0 = static_cast<std::size_t>(g.n(0));

    ScalarField u = psi;
    std::vector<double> history;
    for (int it = 1; it <= config.max_iter; ++it) {
        for (std::size_t node = 0; node < g.size(); ++node) {
            const auto idx = g.multi_index(node);
            double off = 0.0;
            if (idx[0] > 0) off += u[node - 1] * inv_h2[0];
            if (idx[0] + 1 < g.n(0)) off += u[node + 1] * inv_h2[0];
            if (g.dim() == 2) {
                if (idx[1] > 0) off += u[node - n0] * inv_h2[1];
                if (idx[1] + 1 < g.n(1)) off += u[node + n0] * inv_h2[1];
            }
            const double gs = (f[node] + off) / diag;
            u[node] = std::min(psi[node], u[node] + config.relaxation * (gs - u[node]));
        }
        if (it % 10 == 0 || it == config.max_iter) {
            const double r = obstacle_residual(u, f, psi, config.zero_order);
            history.push_back(r);
            if (r <= config.tol) return u;
        }
    }
    throw ConvergenceError("projected SOR did not converge in " + std::to_string(config.max_iter) +
                               " sweeps (last residual " + std::to_string(history.back()) + ")",
                           history);
}

namespace {

struct OracleOutcome {
    ScalarField first;
    int accepted = 0;
};

OracleOutcome enumerate_contact_sets(const ScalarField& f, const ScalarField& psi, bool zero_order) {
    require_same_grid(f.grid(), psi.grid(), "obstacle_oracle");
    const std::size_t n = f.size();
    if (n > 16) throw std::invalid_argument("obstacle oracle limited to 16 nodes");
    const Eigen::MatrixXd a = Eigen::MatrixXd(elliptic_matrix(f.grid(), zero_order ? 1.0 : 0.0));
    const Vec fv = to_vec(f);
    const Vec pv = to_vec(psi);
    const double scale = 1.0 + fv.cwiseAbs().maxCoeff() + pv.cwiseAbs().maxCoeff();
    const double tol = 1e-10 * scale * (1.0 + a.cwiseAbs().maxCoeff());

    OracleOutcome out{ScalarField(f.grid()), 0};
    const auto ni = static_cast<Eigen::Index>(n);
    for (std::uint32_t set = 0; set < (1u << n); ++set) {
        Eigen::MatrixXd sys = a;
        Vec rhs = fv;
        for (Eigen::Index i = 0; i < ni; ++i) {
            if (set & (1u << i)) {
                sys.row(i).setZero();
                sys(i, i) = 1.0;
                rhs[i] = pv[i];
            }
        }
        const Vec u = sys.partialPivLu().solve(rhs);
        const Vec excess = a * u - fv;
        bool ok = true;
        for (Eigen::Index i = 0; i < ni && ok; ++i) {
            if (u[i] > pv[i] + tol) ok = false;
            if ((set & (1u << i)) && excess[i] > tol) ok = false;
        }
        if (ok) {
            if (out.accepted == 0) out.first = to_field(f.grid(), u);
            ++out.accepted;
        }
    }
    return out;
}

}  // namespace

ScalarField obstacle_oracle(const ScalarField& f, const ScalarField& psi, bool zero_order) {
    auto out = enumerate_contact_sets(f, psi, zero_order);
    if (out.accepted == 0) throw std::runtime_error("obstacle oracle: no contact set satisfies complementarity");
    return out.first;
}

int obstacle_oracle_candidates(const ScalarField& f, const ScalarField& psi, bool zero_order) {
    return enumerate_contact_sets(f, psi, zero_order).accepted;
}

double penalized_residual(const ScalarField& u, const ScalarField& f, const ScalarField& psi, double epsilon,
                          bool zero_order) {
    const ScalarField au = apply_elliptic(u, zero_order);
    double r = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        r = std::max(r, std::abs(au[i] + std::max(u[i] - psi[i], 0.0) / epsilon - f[i]));
    }
    return r;
}

ScalarField solve_obstacle_penalized(const ScalarField& f, const ScalarField& psi, double epsilon,
                                     const ObstacleSolveConfig& config) {
    config.validate();
    if (!(epsilon > 0.0)) throw std::invalid_argument("penalization epsilon must be positive");
    require_same_grid(f.grid(), psi.grid(), "solve_obstacle_penalized");
    const Grid& g = f.grid();
    const auto n = static_cast<Eigen::Index>(g.size());
    const SpMat a = elliptic_matrix(g, config.zero_order ? 1.0 : 0.0);
    const Vec fv = to_vec(f);
    const Vec pv = to_vec(psi);
    // Residual is measured against a scale that includes the 1/eps penalty weight.
    const double tol = config.tol * (1.0 + fv.cwiseAbs().maxCoeff() + pv.cwiseAbs().maxCoeff() / epsilon);

    Vec u = sparse_solve(a, fv);
    std::vector<char> active(static_cast<std::size_t>(n), 0);
    std::vector<double> history;
    for (int it = 0; it < 200; ++it) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool next = u[i] > pv[i];
            if (next != static_cast<bool>(active[i])) changed = true;
            active[i] = next;
        }
        if (!changed && it > 0) break;
        SpMat sys = a;
        Vec rhs = fv;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (active[i]) {
                sys.coeffRef(i, i) += 1.0 / epsilon;
                rhs[i] += pv[i] / epsilon;
            }
        }
        u = sparse_solve(sys, rhs);
    }
    ScalarField out = to_field(g, u);
    double r = penalized_residual(out, f, psi, epsilon, config.zero_order);
    history.push_back(r);
    if (r <= tol) return out;

    // Newton stalled: damped fixed point u <- (A + I/eps)^{-1} (f + min(u, psi)/eps).
    SpMat shifted = a;
    for (Eigen::Index i = 0; i < n; ++i) shifted.coeffRef(i, i) += 1.0 / epsilon;
    for (int it = 0; it < config.max_iter; ++it) {
        Vec rhs = fv;
        for (Eigen::Index i = 0; i < n; ++i) rhs[i] += std::min(u[i], pv[i]) / epsilon;
        u = sparse_solve(shifted, rhs);
        out = to_field(g, u);
        r = penalized_residual(out, f, psi, epsilon, config.zero_order);
        history.push_back(r);
        if (r <= tol) return out;
    }
    throw ConvergenceError("penalized obstacle solve did not converge", history);
}

FieldTrajectory solve_obstacle_parabolic(const FieldTrajectory& f_traj, const FieldTrajectory& psi_traj,
                                         const ScalarField& terminal, const ObstacleSolveConfig& config) {
    config.validate();
    const TimeGrid& tg = f_traj.timegrid();
    if (!(tg == psi_traj.timegrid())) throw ShapeError("solve_obstacle_parabolic: time grids differ");
    const Grid& g = f_traj.grid();
    require_same_grid(g, psi_traj.grid(), "solve_obstacle_parabolic");
    require_same_grid(g, terminal.grid(), "solve_obstacle_parabolic");
    const int n_steps = tg.n_steps();
    if (sup_distance(terminal, psi_traj[n_steps]) > 1e-12) {
        throw std::invalid_argument("terminal condition must equal the obstacle at t = T");
    }
    const double dt = tg.dt();
    SpMat b = elliptic_matrix(g, (config.zero_order ? 1.0 : 0.0) + 1.0 / dt);

    FieldTrajectory u(tg, g);
    u[n_steps] = terminal;
    for (int k = n_steps - 1; k >= 0; --k) {
        const Vec rhs = to_vec(u[k + 1]) / dt + to_vec(f_traj[k]);
        const Vec psi = to_vec(psi_traj[k]);
        const Vec uk = solve_lcp_active_set(b, rhs, psi);
        const double r = lcp_residual(b, rhs, psi, uk);
        if (r > config.tol * (1.0 + rhs.cwiseAbs().maxCoeff())) {
            throw ConvergenceError("parabolic obstacle slice " + std::to_string(k) + " failed", {r});
        }
        u[k] = to_field(g, uk);
    }
    return u;
}

}  // namespace mfgstop
