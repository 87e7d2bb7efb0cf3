#include "mfgstop/control.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mfgstop/errors.hpp"
#include "mfgstop/evolutive.hpp"
#include "mfgstop/linalg.hpp"
#include "mfgstop/parallel.hpp"
#include "mfgstop/stationary.hpp"

namespace mfgstop {

const char* to_string(HamiltonianKind kind) {
    return kind == HamiltonianKind::smoothed_norm ? "smoothed_norm" : "quadratic";
}

Hamiltonian Hamiltonian::smoothed_norm(ScalarField beta) {
    for (double b : beta.values()) {
        if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("beta must be finite and nonnegative");
    }
    return Hamiltonian(HamiltonianKind::smoothed_norm, std::move(beta));
}

Hamiltonian Hamiltonian::zero(const Grid& grid) { return smoothed_norm(ScalarField(grid, 0.0)); }

Hamiltonian Hamiltonian::quadratic(const Grid& grid, bool allow_outside_assumptions) {
    if (!allow_outside_assumptions) {
        throw std::invalid_argument(
            "the quadratic Hamiltonian is not globally Lipschitz; set allow_outside_assumptions to use it");
    }
    return Hamiltonian(HamiltonianKind::quadratic, ScalarField(grid, 1.0));
}

bool Hamiltonian::is_zero() const { return kind_ == HamiltonianKind::smoothed_norm && beta_.max_abs() == 0.0; }

double Hamiltonian::radial(std::size_t node, double s) const {
    if (kind_ == HamiltonianKind::quadratic) return 0.5 * s;
    // sqrt(1 + s) - 1 written to avoid cancellation for small s.
    return beta_[node] * s / (std::sqrt(1.0 + s) + 1.0);
}

double Hamiltonian::radial_derivative(std::size_t node, double s) const {
    if (kind_ == HamiltonianKind::quadratic) return 0.5;
    return 0.5 * beta_[node] / std::sqrt(1.0 + s);
}

double Hamiltonian::radial_second_derivative(std::size_t node, double s) const {
    if (kind_ == HamiltonianKind::quadratic) return 0.0;
    return -0.25 * beta_[node] / ((1.0 + s) * std::sqrt(1.0 + s));
}

double Hamiltonian::operator()(std::size_t node, const Momentum& p) const {
    return radial(node, p[0] * p[0] + p[1] * p[1]);
}

Momentum Hamiltonian::gradient(std::size_t node, const Momentum& p) const {
    const double d = 2.0 * radial_derivative(node, p[0] * p[0] + p[1] * p[1]);
    return {d * p[0], d * p[1]};
}

namespace {

// One-sided differences max(D^- v, 0) and min(D^+ v, 0) per axis.
struct UpwindGradient {
    std::array<std::vector<double>, 2> minus;
    std::array<std::vector<double>, 2> plus;
    std::vector<double> s;
};

UpwindGradient upwind_gradient(const ScalarField& v) {
    const Grid& g = v.grid();
    UpwindGradient out;
    out.s.assign(g.size(), 0.0);
    for (int a = 0; a < g.dim(); ++a) {
        out.minus[a].assign(g.size(), 0.0);
        out.plus[a].assign(g.size(), 0.0);
        const double h = g.h(a);
        const std::size_t stride = a == 0 ? 1 : static_cast<std::size_t>(g.n(0));
        for (std::size_t i = 0; i < g.size(); ++i) {
            const auto idx = g.multi_index(i);
            const double left = idx[a] > 0 ? v[i - stride] : 0.0;
            const double right = idx[a] + 1 < g.n(a) ? v[i + stride] : 0.0;
            const double dm = std::max((v[i] - left) / h, 0.0);
            const double dp = std::min((right - v[i]) / h, 0.0);
            out.minus[a][i] = dm;
            out.plus[a][i] = dp;
            out.s[i] += dm * dm + dp * dp;
        }
    }
    return out;
}

}  // namespace

ScalarField discrete_hamiltonian(const Hamiltonian& ham, const ScalarField& v) {
    require_same_grid(ham.grid(), v.grid(), "discrete_hamiltonian");
    const UpwindGradient ug = upwind_gradient(v);
    ScalarField out(v.grid());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = ham.radial(i, ug.s[i]);
    return out;
}

UpwindDrift hamiltonian_drift(const Hamiltonian& ham, const ScalarField& v) {
    require_same_grid(ham.grid(), v.grid(), "hamiltonian_drift");
    const Grid& g = v.grid();
    const UpwindGradient ug = upwind_gradient(v);
    UpwindDrift d = UpwindDrift::zero(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double r = 2.0 * ham.radial_derivative(i, ug.s[i]);
        for (int a = 0; a < g.dim(); ++a) {
            d.back[a][i] = r * ug.minus[a][i];
            d.fwd[a][i] = -r * ug.plus[a][i];
        }
    }
    return d;
}

void ControlSolveConfig::validate() const {
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
    if (max_iter < 1 || max_outer < 1) throw std::invalid_argument("iteration limits must be positive");
}

double ControlMixedReport::max_residual() const {
    return std::max({r_hjb, r_continuation, r_subsolution, r_positivity, r_contact, r_boundary_terminal});
}

nlohmann::json ControlMixedReport::to_json() const {
    return {{"r_hjb", r_hjb},
            {"r_continuation", r_continuation},
            {"r_subsolution", r_subsolution},
            {"r_positivity", r_positivity},
            {"r_contact", r_contact},
            {"r_contact_pointwise", r_contact_pointwise},
            {"r_boundary_terminal", r_boundary_terminal},
            {"r_ibp", r_ibp},
            {"classical_residual", classical_residual},
            {"max_mass_increase", max_mass_increase},
            {"delta_c", delta_c},
            {"contact_nodes", contact_nodes}};
}

FieldTrajectory solve_hjb_obstacle(const FieldTrajectory& m, const CostOperator& cost, const Hamiltonian& ham,
                                   const TimeGrid& timegrid, double epsilon, const ControlSolveConfig& config) {
    config.validate();
    if (epsilon < 0.0) throw std::invalid_argument("epsilon must be nonnegative");
    if (!(m.timegrid() == timegrid)) throw ShapeError("solve_hjb_obstacle: density has a different time grid");
    const Grid& g = m.grid();
    require_same_grid(g, ham.grid(), "solve_hjb_obstacle");
    require_same_grid(g, cost.grid(), "solve_hjb_obstacle");
    const bool limit = epsilon == 0.0;
    const double pen = limit ? 0.0 : 1.0 / epsilon;
    const double dt = timegrid.dt();
    const auto n = static_cast<Eigen::Index>(g.size());
    const SpMat base = elliptic_matrix(g, 1.0 / dt);

    FieldTrajectory u(timegrid, g);
    for (int k = timegrid.n_steps(); k >= 1; --k) {
        const Vec src = to_vec(u[static_cast<std::size_t>(k)]) / dt + to_vec(cost(m[static_cast<std::size_t>(k)]));
        const double scale = 1.0 + src.cwiseAbs().maxCoeff();
        ScalarField v = u[static_cast<std::size_t>(k)];
        std::vector<double> history;
        for (int it = 1;; ++it) {
            const Vec vv = to_vec(v);
            const Vec fv = base * vv + to_vec(discrete_hamiltonian(ham, v)) - src;
            Vec res(n);
            std::vector<bool> pinned(static_cast<std::size_t>(n), false);
            for (Eigen::Index i = 0; i < n; ++i) {
                if (limit) {
                    pinned[static_cast<std::size_t>(i)] = vv[i] > fv[i];
                    res[i] = std::max(fv[i], vv[i]);
                } else {
                    res[i] = fv[i] + pen * std::max(vv[i], 0.0);
                }
            }
            history.push_back(res.cwiseAbs().maxCoeff() / scale);
            if (history.back() <= config.tol) break;
            if (it > config.max_iter) {
                throw ConvergenceError("HJB obstacle solve did not converge on slice " + std::to_string(k - 1),
                                       history);
            }
            SpMat jac = base + advection_matrix(hamiltonian_drift(ham, v));
            Triplets t;
            for (Eigen::Index c = 0; c < jac.outerSize(); ++c) {
                for (SpMat::InnerIterator e(jac, c); e; ++e) {
                    if (!pinned[static_cast<std::size_t>(e.row())]) t.emplace_back(e.row(), e.col(), e.value());
                }
            }
            for (Eigen::Index i = 0; i < n; ++i) {
                if (pinned[static_cast<std::size_t>(i)]) t.emplace_back(i, i, 1.0);
                else if (!limit && vv[i] > 0.0) t.emplace_back(i, i, pen);
            }
            SpMat sys(n, n);
            sys.setFromTriplets(t.begin(), t.end());
            v = to_field(g, vv - sparse_solve(sys, res));
        }
        u[static_cast<std::size_t>(k - 1)] = v;
    }
    return u;
}

namespace {

void check_density(const ScalarField& m0) {
    for (double v : m0.values()) {
        if (v < 0.0) throw std::invalid_argument("initial density must be nonnegative");
    }
}

std::vector<UpwindDrift> drifts_of(const Hamiltonian& ham, const FieldTrajectory& u) {
    const int steps = u.timegrid().n_steps();
    std::vector<UpwindDrift> d;
    d.reserve(static_cast<std::size_t>(steps) + 1);
    d.push_back(UpwindDrift::zero(u.grid()));
    for (int k = 1; k <= steps; ++k) d.push_back(hamiltonian_drift(ham, u[static_cast<std::size_t>(k - 1)]));
    return d;
}

// Assembler with the Hamiltonian linearized at the value trajectory ubar:
//   L v + H_h(ubar) + G(ubar)(v - ubar) + (1/eps) v^+ = f(m).
CoupledAssembler linearized_assembler(const CostOperator& cost, const Hamiltonian& ham, const ScalarField& m0,
                                      const TimeGrid& tg, const FieldTrajectory& ubar,
                                      const std::vector<UpwindDrift>& drift) {
    const Grid& g = m0.grid();
    const int steps = tg.n_steps();
    const auto n = static_cast<Eigen::Index>(g.size());
    const SpMat lu = detail::backward_operator(g, tg, &drift);
    Vec bu(n * steps);
    for (int b = 0; b < steps; ++b) {
        const ScalarField& ub = ubar[static_cast<std::size_t>(b)];
        const Vec gu = advection_matrix(drift[static_cast<std::size_t>(b + 1)]) * to_vec(ub);
        bu.segment(b * n, n) = gu - to_vec(discrete_hamiltonian(ham, ub));
    }
    return detail::evolutive_assembler(cost, std::nullopt, m0, tg, lu, bu);
}

ControlTriple empty_triple(const TimeGrid& tg, const Grid& g) {
    const FieldTrajectory z(tg, g);
    return ControlTriple{z, z, z, z, {}, 0.0, 0, 0, {}, {}};
}

FieldTrajectory unstack_full(const Vec& v, const TimeGrid& tg, const Grid& g, int first) {
    FieldTrajectory out(tg, g);
    detail::unstack_slices(v, out, first);
    return out;
}

}  // namespace

ControlTriple cosmfg_penalized_solve(const CostOperator& cost, const Hamiltonian& ham, const ScalarField& m0,
                                     const TimeGrid& timegrid, double epsilon, const ControlSolveConfig& config,
                                     const ControlTriple* warm) {
    config.validate();
    if (epsilon < 0.0) throw std::invalid_argument("epsilon must be nonnegative");
    check_density(m0);
    const Grid& g = m0.grid();
    require_same_grid(g, cost.grid(), "cosmfg_penalized_solve");
    require_same_grid(g, ham.grid(), "cosmfg_penalized_solve");
    const int steps = timegrid.n_steps();
    const bool limit = epsilon == 0.0;

    FieldTrajectory u(timegrid, g);
    FieldTrajectory m(timegrid, g);
    std::vector<NodeState> states;
    if (warm) {
        u = warm->u;
        m = warm->m;
        const Vec v0 = detail::stack_slices(u, 0, steps);
        states = limit && warm->epsilon > 0.0 ? limit_states_from(warm->states) : warm->states;
        if (!limit && warm->epsilon == 0.0) states = states_from_value(v0);
    } else {
        m = detail::heat_flow(m0, timegrid);
        u = solve_hjb_obstacle(m, cost, ham, timegrid, limit ? 0.0 : epsilon, config);
        const Vec v0 = detail::stack_slices(u, 0, steps);
        states = states_from_value(v0);
        if (limit) {
            const double dc = std::max(1e-8 * v0.cwiseAbs().maxCoeff(), 1e-12);
            for (Eigen::Index i = 0; i < v0.size(); ++i) {
                states[static_cast<std::size_t>(i)] = v0[i] >= -dc ? NodeState::mixed : NodeState::continuation;
            }
        }
    }
    m[0] = m0;

    ControlTriple out = empty_triple(timegrid, g);
    out.epsilon = epsilon;
    const CoupledOptions options{config.tol, config.max_iter};
    CoupledSolution sol;
    std::vector<UpwindDrift> drift;
    for (int outer = 1;; ++outer) {
        drift = drifts_of(ham, u);
        const CoupledAssembler assemble = linearized_assembler(cost, ham, m0, timegrid, u, drift);
        const Vec v0 = detail::stack_slices(u, 0, steps);
        sol = solve_coupled(assemble, epsilon, v0, detail::stack_slices(m, 1, steps), states, options);
        const double change = (sol.v - v0).cwiseAbs().maxCoeff();
        out.iterations += sol.iterations;
        out.residual_history.push_back(change);
        detail::unstack_slices(sol.v, u, 0);
        detail::unstack_slices(sol.m, m, 1);
        states = sol.states;
        out.outer_iterations = outer;
        if (ham.is_zero() || change <= config.tol * (1.0 + sol.v.cwiseAbs().maxCoeff())) break;
        if (outer >= config.max_outer) {
            throw ConvergenceError("frozen-Hamiltonian iteration did not converge", out.residual_history);
        }
    }

    out.u = u;
    out.m = m;
    out.alpha = unstack_full(sol.alpha, timegrid, g, 0);
    FieldTrajectory rate(timegrid, g);
    const auto n = static_cast<Eigen::Index>(g.size());
    for (int b = 0; b < steps; ++b) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index j = b * n + i;
            const double mk = sol.m[j];
            rate[static_cast<std::size_t>(b + 1)][static_cast<std::size_t>(i)] = mk > 0.0 ? std::max(sol.kill[j], 0.0) / mk : 0.0;
        }
    }
    out.killing_rate = rate;
    out.drift = std::move(drift);
    out.states = std::move(states);
    return out;
}

ControlMixedReport verify_cosmfg(const FieldTrajectory& u, const FieldTrajectory& m, const CostOperator& cost,
                                 const Hamiltonian& ham, const ScalarField& m0, double delta_c) {
    const TimeGrid& tg = u.timegrid();
    const Grid& g = u.grid();
    if (!(m.timegrid() == tg)) throw ShapeError("verify_cosmfg: time grids differ");
    require_same_grid(g, m.grid(), "verify_cosmfg");
    require_same_grid(g, m0.grid(), "verify_cosmfg");
    require_same_grid(g, cost.grid(), "verify_cosmfg");
    require_same_grid(g, ham.grid(), "verify_cosmfg");
    const double dt = tg.dt();
    const int steps = tg.n_steps();

    ControlMixedReport r;
    if (delta_c < 0.0) {
        r.delta_c = std::max(1e-8 * u.max_abs(), 1e-12);
    } else {
        r.delta_c = delta_c;
    }
    double contact = 0.0;
    double pointwise = 0.0;
    double classical = 0.0;
    double ibp = 0.0;
    for (int k = 1; k <= steps; ++k) {
        const ScalarField& vprev = u[static_cast<std::size_t>(k - 1)];
        const ScalarField& mk = m[static_cast<std::size_t>(k)];
        const UpwindDrift drift = hamiltonian_drift(ham, vprev);
        const Vec gv = advection_matrix(drift) * to_vec(vprev);
        const Vec gtm = advection_matrix(drift, true) * to_vec(mk);
        const ScalarField f = cost(mk);
        const ScalarField hh = discrete_hamiltonian(ham, vprev);
        const ScalarField lv = (1.0 / dt) * (vprev - u[static_cast<std::size_t>(k)]) + apply_elliptic(vprev, false);
        const ScalarField fr = (1.0 / dt) * (mk - m[static_cast<std::size_t>(k - 1)]) + apply_elliptic(mk, false);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            const double mu = f[i] - lv[i] - hh[i];
            const double fwd = fr[i] + gtm[ii];
            r.r_hjb = std::max(r.r_hjb, std::abs(std::min(-vprev[i], mu)));
            r.r_subsolution = std::max(r.r_subsolution, fwd);
            r.r_positivity = std::max(r.r_positivity, -mk[i]);
            ibp += (lv[i] + gv[ii]) * mk[i];
            if (vprev[i] < -r.delta_c) {
                r.r_continuation = std::max(r.r_continuation, std::abs(fwd));
            } else {
                contact += mu * mk[i];
                pointwise += (f[i] - ham(i, {0.0, 0.0})) * mk[i];
                classical += mk[i];
                ++r.contact_nodes;
            }
        }
        r.max_mass_increase = std::max(r.max_mass_increase, mass(mk) - mass(m[static_cast<std::size_t>(k - 1)]));
    }
    const double w = g.cell_volume() * dt;
    r.r_contact = std::abs(contact) * w;
    r.r_contact_pointwise = std::abs(pointwise) * w;
    r.classical_residual = std::abs(classical) * w;
    r.r_ibp = std::abs(ibp * w - inner(u[0], m0));
    r.r_boundary_terminal =
        std::max(u[static_cast<std::size_t>(steps)].max_abs(), sup_distance(m[0], m0));
    return r;
}

ControlResult cosmfg_coupled_solve(const CostOperator& cost, const Hamiltonian& ham, const ScalarField& m0,
                                   const TimeGrid& timegrid, const std::vector<double>& schedule,
                                   const ControlSolveConfig& config, const std::optional<FieldTrajectory>& m_init,
                                   bool solve_limit) {
    if (schedule.empty()) throw std::invalid_argument("empty epsilon schedule");
    for (std::size_t j = 0; j < schedule.size(); ++j) {
        if (!(schedule[j] > 0.0) || (j > 0 && !(schedule[j] < schedule[j - 1]))) {
            throw std::invalid_argument("epsilon schedule must be positive and strictly decreasing");
        }
    }
    std::optional<ControlTriple> cur;
    if (m_init) {
        ControlTriple seed = empty_triple(timegrid, m0.grid());
        seed.m = *m_init;
        seed.u = solve_hjb_obstacle(*m_init, cost, ham, timegrid, schedule.front(), config);
        seed.epsilon = schedule.front();
        seed.states = states_from_value(detail::stack_slices(seed.u, 0, timegrid.n_steps()));
        cur = std::move(seed);
    }
    ControlResult out{empty_triple(timegrid, m0.grid()), {}, false, {}};
    for (std::size_t j = 0; j < schedule.size(); ++j) {
        ControlTriple next = [&] {
            try {
                return cosmfg_penalized_solve(cost, ham, m0, timegrid, schedule[j], config, cur ? &*cur : nullptr);
            } catch (const ConvergenceError& e) {
                throw ConvergenceError("continuation stage " + std::to_string(j) + ": " + e.what(), e.history());
            }
        }();
        out.stages.push_back({schedule[j], next.iterations, next.outer_iterations,
                              verify_cosmfg(next.u, next.m, cost, ham, m0, config.delta_c)});
        cur = std::move(next);
    }
    if (solve_limit) {
        try {
            cur = cosmfg_penalized_solve(cost, ham, m0, timegrid, 0.0, config, &*cur);
            out.limit_solved = true;
        } catch (const ConvergenceError&) {
            out.limit_solved = false;
        }
    }
    out.solution = std::move(*cur);
    out.report = verify_cosmfg(out.solution.u, out.solution.m, cost, ham, m0, config.delta_c);
    return out;
}

double control_uniqueness_probe(const CostOperator& cost, const Hamiltonian& ham, const ScalarField& m0,
                                const TimeGrid& timegrid, const std::vector<std::uint64_t>& seeds,
                                const ControlSolveConfig& config, int threads) {
    if (seeds.size() < 2) throw std::invalid_argument("a uniqueness probe needs at least two starts");
    const std::vector<double> schedule = geometric_schedule();
    const auto ms = parallel_map<FieldTrajectory>(seeds.size(), threads, [&](std::size_t i) {
        return cosmfg_coupled_solve(cost, ham, m0, timegrid, schedule, config,
                                    random_trajectory_start(m0, timegrid, seeds[i]))
            .solution.m;
    });
    double gap = 0.0;
    for (std::size_t i = 0; i < ms.size(); ++i) {
        for (std::size_t j = i + 1; j < ms.size(); ++j) gap = std::max(gap, sup_distance(ms[i], ms[j]));
    }
    return gap;
}

double fenchel_conjugate_exact(const Hamiltonian& ham, std::size_t node, const Momentum& a) {
    const double speed = std::hypot(a[0], a[1]);
    if (ham.kind() == HamiltonianKind::quadratic) return 0.5 * speed * speed;
    const double beta = ham.beta()[node];
    if (speed == 0.0) return 0.0;
    if (speed >= beta) return infinite_cost;
    const double r = speed / beta;
    // beta (1 - sqrt(1 - r^2)) without cancellation.
    return beta * r * r / (1.0 + std::sqrt(1.0 - r * r));
}

double fenchel_conjugate(const Hamiltonian& ham, std::size_t node, const Momentum& a) {
    const int dim = ham.grid().dim();
    const Momentum aa = {a[0], dim > 1 ? a[1] : 0.0};
    const double speed = std::hypot(aa[0], aa[1]);
    if (speed == 0.0) return 0.0;
    if (ham.kind() == HamiltonianKind::smoothed_norm && speed >= ham.beta()[node]) return infinite_cost;
    auto objective = [&](const Momentum& p) { return aa[0] * p[0] + aa[1] * p[1] - ham(node, p); };

    // Coarse lattice on [-R, R]^dim, enlarged while the best point sits on the boundary.
    constexpr int half = 20;
    Momentum best = {0.0, 0.0};
    double best_val = objective(best);
    for (double radius = 1.0; radius <= 1e8; radius *= 4.0) {
        const double step = radius / half;
        int best_i = 0;
        int best_j = 0;
        for (int i = -half; i <= half; ++i) {
            for (int j = (dim > 1 ? -half : 0); j <= (dim > 1 ? half : 0); ++j) {
                const Momentum p = {i * step, j * step};
                const double val = objective(p);
                if (val > best_val) {
                    best_val = val;
                    best = p;
                    best_i = i;
                    best_j = j;
                }
            }
        }
        if (std::abs(best_i) < half && std::abs(best_j) < half) break;
    }

    // Damped Newton on the concave objective: gradient a - DH(p), Hessian -D^2 H(p).
    Momentum p = best;
    for (int it = 0; it < 200; ++it) {
        const Momentum dh = ham.gradient(node, p);
        const Momentum grad = {aa[0] - dh[0], aa[1] - dh[1]};
        if (std::hypot(grad[0], grad[1]) <= 1e-15 * (1.0 + speed)) break;
        const double s = p[0] * p[0] + p[1] * p[1];
        const double r1 = 2.0 * ham.radial_derivative(node, s);
        const double r2 = 4.0 * ham.radial_second_derivative(node, s);
        // D^2 H = r1 I + r2 p p^T
        const double h00 = r1 + r2 * p[0] * p[0];
        const double h01 = r2 * p[0] * p[1];
        const double h11 = dim > 1 ? r1 + r2 * p[1] * p[1] : 1.0;
        const double det = h00 * h11 - h01 * h01;
        if (!(det > 0.0)) break;
        Momentum dir = {(h11 * grad[0] - h01 * grad[1]) / det, (h00 * grad[1] - h01 * grad[0]) / det};
        if (dim == 1) dir = {grad[0] / h00, 0.0};
        const double current = objective(p);
        double t = 1.0;
        Momentum trial = {p[0] + dir[0], p[1] + dir[1]};
        while (objective(trial) < current && t > 1e-12) {
            t *= 0.5;
            trial = {p[0] + t * dir[0], p[1] + t * dir[1]};
        }
        if (objective(trial) < current) break;
        p = trial;
    }
    return std::max(objective(p), best_val);
}

double drift_speed(const UpwindDrift& drift, std::size_t node) {
    double s = 0.0;
    for (int a = 0; a < drift.grid.dim(); ++a) {
        s += drift.back[a][node] * drift.back[a][node] + drift.fwd[a][node] * drift.fwd[a][node];
    }
    return std::sqrt(s);
}

double control_objective(const FieldTrajectory& m, const std::vector<UpwindDrift>& drift,
                         const PotentialOperator& potential, const Hamiltonian& ham, double feasibility_tol) {
    const TimeGrid& tg = m.timegrid();
    const Grid& g = m.grid();
    const int steps = tg.n_steps();
    if (drift.size() != static_cast<std::size_t>(steps) + 1) {
        throw ShapeError("control_objective: one drift per time slice is required");
    }
    require_same_grid(g, ham.grid(), "control_objective");
    const FieldTrajectory fr = forward_residual(m, drift);
    std::string violating;
    for (int k = 1; k <= steps; ++k) {
        const auto& slice = fr[static_cast<std::size_t>(k)];
        double worst = slice.max();
        for (double v : m[static_cast<std::size_t>(k)].values()) worst = std::max(worst, -v);
        if (worst > feasibility_tol) violating += (violating.empty() ? "" : ", ") + std::to_string(k);
    }
    if (!violating.empty()) {
        throw std::invalid_argument("control_objective: infeasible pair on slices " + violating);
    }
    double total = 0.0;
    for (int k = 1; k <= steps; ++k) {
        const ScalarField& mk = m[static_cast<std::size_t>(k)];
        const UpwindDrift& dk = drift[static_cast<std::size_t>(k)];
        for (std::size_t i = 0; i < g.size(); ++i) {
            total += potential.at(i, mk[i]) - ham(i, {0.0, 0.0}) * mk[i];
            if (mk[i] > 0.0) total += fenchel_conjugate_exact(ham, i, {drift_speed(dk, i), 0.0}) * mk[i];
        }
    }
    return total * g.cell_volume() * tg.dt();
}

}  // namespace mfgstop
