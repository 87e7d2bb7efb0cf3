#include "mfgstop/evolutive.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mfgstop/errors.hpp"
#include "mfgstop/linalg.hpp"
#include "mfgstop/parallel.hpp"
#include "mfgstop/stationary.hpp"

namespace mfgstop {

ObstacleOperator ObstacleOperator::constant_field(FieldTrajectory psi) {
    ObstacleOperator op;
    op.kind_ = ObstacleKind::constant_field;
    op.psi_ = std::move(psi);
    return op;
}

ObstacleOperator ObstacleOperator::zero(const TimeGrid& timegrid, const Grid& grid) {
    return constant_field(FieldTrajectory(timegrid, grid));
}

ObstacleOperator ObstacleOperator::heat_from_g(CostOperator g) {
    ObstacleOperator op;
    op.kind_ = ObstacleKind::heat_from_g;
    op.g_ = std::move(g);
    return op;
}

FieldTrajectory backward_heat(const FieldTrajectory& source, const ScalarField& terminal) {
    const TimeGrid& tg = source.timegrid();
    const Grid& g = source.grid();
    require_same_grid(g, terminal.grid(), "backward_heat");
    const double dt = tg.dt();
    Eigen::SparseLU<SpMat> lu;
    const SpMat b = elliptic_matrix(g, 1.0 / dt);
    lu.compute(b);
    if (lu.info() != Eigen::Success) throw std::runtime_error("backward heat factorisation failed");
    FieldTrajectory psi(tg, g);
    psi[static_cast<std::size_t>(tg.n_steps())] = terminal;
    for (int k = tg.n_steps(); k >= 1; --k) {
        const Vec rhs = to_vec(psi[k]) / dt - to_vec(source[k]);
        psi[k - 1] = to_field(g, lu.solve(rhs));
    }
    return psi;
}

ObstacleEvaluation ObstacleOperator::apply(const FieldTrajectory& m) const {
    const TimeGrid& tg = m.timegrid();
    const Grid& g = m.grid();
    const double dt = tg.dt();
    if (kind_ == ObstacleKind::constant_field) {
        if (!(psi_->timegrid() == tg)) throw ShapeError("obstacle trajectory has a different time grid");
        require_same_grid(psi_->grid(), g, "obstacle");
        FieldTrajectory gp(tg, g);
        for (int k = 1; k <= tg.n_steps(); ++k) {
            gp[k] = (1.0 / dt) * ((*psi_)[k] - (*psi_)[k - 1]) - apply_elliptic((*psi_)[k - 1], false);
        }
        return {*psi_, gp};
    }
    FieldTrajectory source(tg, g);
    for (int k = 1; k <= tg.n_steps(); ++k) source[k] = (*g_)(m[k]);
    FieldTrajectory psi = backward_heat(source, ScalarField(g));
    return {std::move(psi), std::move(source)};
}

void EvolutiveSolveConfig::validate() const {
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");
}

double EvolutiveMixedReport::max_residual() const {
    return std::max({r_obstacle, r_continuation, r_subsolution, r_positivity, r_contact, r_duality, r_terminal,
                     r_initial});
}

nlohmann::json EvolutiveMixedReport::to_json() const {
    return {{"r_obstacle", r_obstacle},
            {"r_continuation", r_continuation},
            {"r_subsolution", r_subsolution},
            {"r_positivity", r_positivity},
            {"r_contact", r_contact},
            {"r_contact_pointwise", r_contact_pointwise},
            {"r_duality", r_duality},
            {"r_terminal", r_terminal},
            {"r_initial", r_initial},
            {"classical_residual", classical_residual},
            {"max_mass_increase", max_mass_increase},
            {"delta_c", delta_c},
            {"contact_nodes", contact_nodes}};
}

namespace detail {

SpMat backward_operator(const Grid& grid, const TimeGrid& timegrid, const std::vector<UpwindDrift>* drift) {
    const std::size_t n = grid.size();
    const int steps = timegrid.n_steps();
    const double dt = timegrid.dt();
    Triplets t;
    for (int b = 0; b < steps; ++b) {
        const std::size_t off = static_cast<std::size_t>(b) * n;
        append_elliptic(t, grid, 1.0 / dt, off);
        if (drift) append_advection(t, (*drift)[static_cast<std::size_t>(b + 1)], off);
        if (b + 1 < steps) {
            for (std::size_t i = 0; i < n; ++i) t.emplace_back(static_cast<int>(off + i), static_cast<int>(off + n + i), -1.0 / dt);
        }
    }
    const auto size = static_cast<Eigen::Index>(n * static_cast<std::size_t>(steps));
    SpMat l(size, size);
    l.setFromTriplets(t.begin(), t.end());
    return l;
}

Vec stack_slices(const FieldTrajectory& traj, int first, int count) {
    const auto n = static_cast<Eigen::Index>(traj.grid().size());
    Vec v(n * count);
    for (int b = 0; b < count; ++b) v.segment(b * n, n) = to_vec(traj[static_cast<std::size_t>(first + b)]);
    return v;
}

void unstack_slices(const Vec& v, FieldTrajectory& traj, int first) {
    const auto n = static_cast<Eigen::Index>(traj.grid().size());
    const auto count = v.size() / n;
    for (Eigen::Index b = 0; b < count; ++b) {
        traj[static_cast<std::size_t>(first + b)] = to_field(traj.grid(), v.segment(b * n, n));
    }
}

FieldTrajectory heat_flow(const ScalarField& m0, const TimeGrid& tg) {
    return solve_density_parabolic(m0, FieldTrajectory(tg, m0.grid()), std::nullopt, tg);
}

double trajectory_contact_threshold(const FieldTrajectory& u, const FieldTrajectory& psi) {
    double d = 0.0;
    for (std::size_t k = 0; k < u.n_slices(); ++k) d = std::max(d, sup_distance(u[k], psi[k]));
    return std::max(1e-8 * d, 1e-12);
}

}  // namespace detail

namespace {

SpMat block_diagonal(const std::vector<SpMat>& blocks) {
    Triplets t;
    Eigen::Index off = 0;
    for (const auto& b : blocks) {
        for (Eigen::Index c = 0; c < b.outerSize(); ++c) {
            for (SpMat::InnerIterator it(b, c); it; ++it) t.emplace_back(off + it.row(), off + it.col(), it.value());
        }
        off += b.rows();
    }
    SpMat out(off, off);
    out.setFromTriplets(t.begin(), t.end());
    return out;
}

bool cost_is_linear(const CostOperator& c) { return !c.is_local() || c.a() == 0.0 || c.p() == 1.0; }

}  // namespace

namespace detail {

CoupledAssembler evolutive_assembler(const CostOperator& cost, const std::optional<CostOperator>& gcost,
                                     const ScalarField& m0, const TimeGrid& tg, const SpMat& lu, const Vec& bu) {
    const Grid g = m0.grid();
    const int steps = tg.n_steps();
    const auto n = static_cast<Eigen::Index>(g.size());
    const SpMat lm = lu.transpose();
    Vec bm = Vec::Zero(n * steps);
    bm.head(n) = to_vec(m0) / tg.dt();
    const bool linear = cost_is_linear(cost) && (!gcost || cost_is_linear(*gcost));
    auto jacobian = [=](const Vec& m) {
        std::vector<SpMat> blocks;
        for (int b = 0; b < steps; ++b) {
            const ScalarField mk = to_field(g, m.segment(b * n, n));
            SpMat j = cost.jacobian(mk);
            if (gcost) j += gcost->jacobian(mk);
            blocks.push_back(j);
        }
        return block_diagonal(blocks);
    };
    const SpMat fixed_jac = linear ? jacobian(Vec::Zero(n * steps)) : SpMat();
    return [=](const Vec&, const Vec& m) {
        Vec f(n * steps);
        for (int b = 0; b < steps; ++b) {
            const ScalarField mk = to_field(g, m.segment(b * n, n));
            Vec fk = to_vec(cost(mk));
            if (gcost) fk += to_vec((*gcost)(mk));
            f.segment(b * n, n) = fk;
        }
        return CoupledLinearization{lu, bu, lm, bm, f, linear ? fixed_jac : jacobian(m)};
    };
}

}  // namespace detail

namespace {

CoupledAssembler obstacle_assembler(const CostOperator& cost, const ObstacleOperator& obstacle, const ScalarField& m0,
                                    const TimeGrid& tg) {
    const Grid g = m0.grid();
    const int steps = tg.n_steps();
    Vec bu = Vec::Zero(static_cast<Eigen::Index>(g.size()) * steps);
    if (!obstacle.depends_on_m()) {
        const auto ev = obstacle.apply(FieldTrajectory(tg, g));
        bu = detail::stack_slices(ev.g_psi, 1, steps);
    }
    return detail::evolutive_assembler(cost, obstacle.source_cost(), m0, tg, detail::backward_operator(g, tg), bu);
}

void check_initial_density(const ScalarField& m0) {
    for (double v : m0.values()) {
        if (v < 0.0) throw std::invalid_argument("initial density must be nonnegative");
    }
}

}  // namespace

EvolutiveTriple osmfg_penalized_solve(const CostOperator& cost, const ObstacleOperator& obstacle,
                                      const ScalarField& m0, const TimeGrid& timegrid, double epsilon,
                                      const EvolutiveSolveConfig& config, const EvolutiveTriple* warm) {
    config.validate();
    if (epsilon < 0.0) throw std::invalid_argument("epsilon must be nonnegative");
    check_initial_density(m0);
    const Grid& g = m0.grid();
    require_same_grid(g, cost.grid(), "osmfg_penalized_solve");
    const int steps = timegrid.n_steps();
    const bool limit = epsilon == 0.0;
    const CoupledAssembler assemble = obstacle_assembler(cost, obstacle, m0, timegrid);

    Vec v0;
    Vec mv0;
    std::vector<NodeState> states;
    if (warm) {
        v0 = detail::stack_slices(warm->u - warm->psi, 0, steps);
        mv0 = detail::stack_slices(warm->m, 1, steps);
        states = limit && warm->epsilon > 0.0 ? limit_states_from(warm->states) : warm->states;
        if (!limit && warm->epsilon == 0.0) states = states_from_value(v0);
    } else {
        mv0 = detail::stack_slices(detail::heat_flow(m0, timegrid), 1, steps);
        const CoupledLinearization lin = assemble(Vec::Zero(mv0.size()), mv0);
        v0 = sparse_solve(lin.lu, lin.f + lin.bu);
        states = states_from_value(v0);
        if (limit) {
            const double dc = std::max(1e-8 * v0.cwiseAbs().maxCoeff(), 1e-12);
            for (Eigen::Index i = 0; i < v0.size(); ++i) {
                states[static_cast<std::size_t>(i)] = v0[i] >= -dc ? NodeState::mixed : NodeState::continuation;
            }
        }
    }
    const CoupledSolution s = solve_coupled(assemble, epsilon, v0, mv0, states, CoupledOptions{config.tol, config.max_iter});

    FieldTrajectory m(timegrid, g);
    m[0] = m0;
    detail::unstack_slices(s.m, m, 1);
    ObstacleEvaluation ev = obstacle.apply(m);
    FieldTrajectory v(timegrid, g);
    detail::unstack_slices(s.v, v, 0);
    FieldTrajectory u(timegrid, g);
    for (int k = 0; k <= steps; ++k) u[k] = v[k] + ev.psi[k];
    FieldTrajectory alpha(timegrid, g);
    detail::unstack_slices(s.alpha, alpha, 0);
    return EvolutiveTriple{u, m, alpha, ev.psi, ev.g_psi, epsilon, s.iterations, s.history, s.states};
}

EvolutiveMixedReport verify_mixed_evolutive(const FieldTrajectory& u, const FieldTrajectory& m,
                                            const CostOperator& cost, const ObstacleOperator& obstacle,
                                            const ScalarField& m0, double delta_c) {
    const TimeGrid& tg = u.timegrid();
    const Grid& g = u.grid();
    if (!(m.timegrid() == tg)) throw ShapeError("verify_mixed_evolutive: time grids differ");
    require_same_grid(g, m.grid(), "verify_mixed_evolutive");
    require_same_grid(g, m0.grid(), "verify_mixed_evolutive");
    require_same_grid(g, cost.grid(), "verify_mixed_evolutive");
    const ObstacleEvaluation ev = obstacle.apply(m);
    const double dt = tg.dt();
    const int steps = tg.n_steps();

    EvolutiveMixedReport r;
    r.delta_c = delta_c < 0.0 ? detail::trajectory_contact_threshold(u, ev.psi) : delta_c;
    double contact = 0.0;
    double pointwise = 0.0;
    double classical = 0.0;
    double duality = 0.0;
    for (int k = 1; k <= steps; ++k) {
        const ScalarField vprev = u[k - 1] - ev.psi[k - 1];
        const ScalarField vk = u[k] - ev.psi[k];
        const ScalarField ft = cost(m[k]) + ev.g_psi[k];
        const ScalarField lv = (1.0 / dt) * (vprev - vk) + apply_elliptic(vprev, false);
        const ScalarField fr = (1.0 / dt) * (m[k] - m[k - 1]) + apply_elliptic(m[k], false);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double mu = ft[i] - lv[i];
            r.r_obstacle = std::max(r.r_obstacle, std::abs(std::min(-vprev[i], mu)));
            r.r_subsolution = std::max(r.r_subsolution, fr[i]);
            r.r_positivity = std::max(r.r_positivity, -m[k][i]);
            duality += ft[i] * m[k][i];
            if (vprev[i] < -r.delta_c) {
                r.r_continuation = std::max(r.r_continuation, std::abs(fr[i]));
            } else {
                contact += mu * m[k][i];
                pointwise += ft[i] * m[k][i];
                classical += m[k][i];
                ++r.contact_nodes;
            }
        }
        r.max_mass_increase = std::max(r.max_mass_increase, mass(m[k]) - mass(m[k - 1]));
    }
    const double w = g.cell_volume() * dt;
    r.r_contact = std::abs(contact) * w;
    r.r_contact_pointwise = std::abs(pointwise) * w;
    r.classical_residual = std::abs(classical) * w;
    r.r_duality = std::abs(duality * w - inner(u[0] - ev.psi[0], m0));
    r.r_terminal = sup_distance(u[static_cast<std::size_t>(steps)], ev.psi[static_cast<std::size_t>(steps)]);
    r.r_initial = sup_distance(m[0], m0);
    return r;
}

EvolutiveResult osmfg_continuation(const CostOperator& cost, const ObstacleOperator& obstacle, const ScalarField& m0,
                                   const TimeGrid& timegrid, const std::vector<double>& schedule,
                                   const EvolutiveSolveConfig& config, const std::optional<FieldTrajectory>& m_init,
                                   bool solve_limit) {
    if (schedule.empty()) throw std::invalid_argument("empty epsilon schedule");
    for (std::size_t j = 0; j < schedule.size(); ++j) {
        if (!(schedule[j] > 0.0) || (j > 0 && !(schedule[j] < schedule[j - 1]))) {
            throw std::invalid_argument("epsilon schedule must be positive and strictly decreasing");
        }
    }
    std::optional<EvolutiveTriple> cur;
    if (m_init) {
        // Seed with the value of the uncoupled backward problem for the given density.
        const ObstacleEvaluation ev = obstacle.apply(*m_init);
        FieldTrajectory f(timegrid, m0.grid());
        for (int k = 1; k <= timegrid.n_steps(); ++k) f[k] = -1.0 * (cost((*m_init)[k]) + ev.g_psi[k]);
        const FieldTrajectory v = backward_heat(f, ScalarField(m0.grid()));
        FieldTrajectory u(timegrid, m0.grid());
        for (int k = 0; k <= timegrid.n_steps(); ++k) u[k] = v[k] + ev.psi[k];
        cur = EvolutiveTriple{u, *m_init, FieldTrajectory(timegrid, m0.grid()), ev.psi, ev.g_psi, schedule.front(),
                              0, {}, states_from_value(detail::stack_slices(v, 0, timegrid.n_steps()))};
    }
    EvolutiveResult out{EvolutiveTriple{FieldTrajectory(timegrid, m0.grid()), FieldTrajectory(timegrid, m0.grid()),
                                        FieldTrajectory(timegrid, m0.grid()), FieldTrajectory(timegrid, m0.grid()),
                                        FieldTrajectory(timegrid, m0.grid()), 0.0, 0, {}, {}},
                        {}, false, {}};
    for (std::size_t j = 0; j < schedule.size(); ++j) {
        EvolutiveTriple next = [&] {
            try {
                return osmfg_penalized_solve(cost, obstacle, m0, timegrid, schedule[j], config, cur ? &*cur : nullptr);
            } catch (const ConvergenceError& e) {
                throw ConvergenceError("continuation stage " + std::to_string(j) + ": " + e.what(), e.history());
            }
        }();
        out.stages.push_back({schedule[j], next.iterations,
                              verify_mixed_evolutive(next.u, next.m, cost, obstacle, m0, config.delta_c)});
        cur = std::move(next);
    }
    if (solve_limit) {
        try {
            cur = osmfg_penalized_solve(cost, obstacle, m0, timegrid, 0.0, config, &*cur);
            out.limit_solved = true;
        } catch (const ConvergenceError&) {
            out.limit_solved = false;
        }
    }
    out.solution = std::move(*cur);
    out.report = verify_mixed_evolutive(out.solution.u, out.solution.m, cost, obstacle, m0, config.delta_c);
    return out;
}

FieldTrajectory random_trajectory_start(const ScalarField& m0, const TimeGrid& timegrid, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double s = 2.0 * unit(rng);
    FieldTrajectory m = detail::heat_flow(m0, timegrid);
    for (int k = 1; k <= timegrid.n_steps(); ++k) {
        for (std::size_t i = 0; i < m0.size(); ++i) m[k][i] *= s * (1.0 + 0.5 * (2.0 * unit(rng) - 1.0));
    }
    return m;
}

double evolutive_uniqueness_probe(const CostOperator& cost, const ObstacleOperator& obstacle, const ScalarField& m0,
                                  const TimeGrid& timegrid, const std::vector<std::uint64_t>& seeds,
                                  const EvolutiveSolveConfig& config, int threads) {
    if (seeds.size() < 2) throw std::invalid_argument("a uniqueness probe needs at least two starts");
    const std::vector<double> schedule = geometric_schedule();
    const auto ms = parallel_map<FieldTrajectory>(seeds.size(), threads, [&](std::size_t i) {
        return osmfg_continuation(cost, obstacle, m0, timegrid, schedule, config,
                                  random_trajectory_start(m0, timegrid, seeds[i]))
            .solution.m;
    });
    double gap = 0.0;
    for (std::size_t i = 0; i < ms.size(); ++i) {
        for (std::size_t j = i + 1; j < ms.size(); ++j) gap = std::max(gap, sup_distance(ms[i], ms[j]));
    }
    return gap;
}

}  // namespace mfgstop
