#include "mfgstop/stationary.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mfgstop/density.hpp"
#include "mfgstop/errors.hpp"
#include "mfgstop/linalg.hpp"
#include "mfgstop/obstacle.hpp"
#include "mfgstop/parallel.hpp"

namespace mfgstop {

void StationarySolveConfig::validate() const {
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
    if (max_iter < 1 || max_outer < 1) throw std::invalid_argument("iteration limits must be positive");
    if (!(damping > 0.0 && damping <= 1.0)) throw std::invalid_argument("damping must lie in (0, 1]");
    if (!(alpha_step > 0.0)) throw std::invalid_argument("alpha_step must be positive");
}

double MixedSolutionReport::max_residual() const {
    return std::max({r_obstacle, r_continuation, r_subsolution, r_positivity, r_contact, r_duality});
}

nlohmann::json MixedSolutionReport::to_json() const {
    return {{"r_obstacle", r_obstacle},
            {"r_continuation", r_continuation},
            {"r_subsolution", r_subsolution},
            {"r_positivity", r_positivity},
            {"r_contact", r_contact},
            {"r_contact_pointwise", r_contact_pointwise},
            {"r_duality", r_duality},
            {"classical_residual", classical_residual},
            {"delta_c", delta_c},
            {"contact_nodes", contact_nodes},
            {"dim", dim},
            {"n_interior", n_interior}};
}

MixedSolutionReport verify_mixed(const ScalarField& u, const ScalarField& m, const CostOperator& cost,
                                 const ScalarField& rho, double delta_c, const std::optional<ScalarField>& psi_in) {
    const Grid& g = u.grid();
    require_same_grid(g, m.grid(), "verify_mixed");
    require_same_grid(g, rho.grid(), "verify_mixed");
    require_same_grid(g, cost.grid(), "verify_mixed");
    const ScalarField psi = psi_in ? *psi_in : ScalarField(g);
    require_same_grid(g, psi.grid(), "verify_mixed");

    const ScalarField f = cost(m);
    const ScalarField au = apply_elliptic(u);
    const ScalarField am = apply_elliptic(m);
    const ScalarField apsi = apply_elliptic(psi);

    MixedSolutionReport r;
    r.delta_c = delta_c < 0.0 ? default_contact_threshold(u, psi) : delta_c;
    r.dim = g.dim();
    for (int a = 0; a < g.dim(); ++a) r.n_interior.push_back(g.n(a));
    const NodeClassification cls = classify_nodes(u, psi, r.delta_c);

    r.r_obstacle = obstacle_residual(u, f, psi);
    double contact = 0.0;
    double pointwise = 0.0;
    double classical = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        r.r_subsolution = std::max(r.r_subsolution, am[i] - rho[i]);
        r.r_positivity = std::max(r.r_positivity, -m[i]);
        if (cls.continuation[i]) {
            r.r_continuation = std::max(r.r_continuation, std::abs(am[i] - rho[i]));
        } else {
            contact += (f[i] - au[i]) * m[i];
            pointwise += (f[i] - apsi[i]) * m[i];
            classical += m[i];
            ++r.contact_nodes;
        }
    }
    const double hv = g.cell_volume();
    r.r_contact = std::abs(contact) * hv;
    r.r_contact_pointwise = std::abs(pointwise) * hv;
    r.classical_residual = std::abs(classical) * hv;
    r.r_duality = std::abs(inner(f - apsi, m) - inner(u - psi, rho));
    return r;
}

ScalarField solve_obstacle_exact(const ScalarField& f, const ScalarField& psi, bool zero_order) {
    require_same_grid(f.grid(), psi.grid(), "solve_obstacle_exact");
    const SpMat b = elliptic_matrix(f.grid(), zero_order ? 1.0 : 0.0);
    return to_field(f.grid(), solve_lcp_active_set(b, to_vec(f), to_vec(psi)));
}

namespace {

void require_nonnegative(const ScalarField& rho, const char* what) {
    if (rho.size() > 0 && rho.min() < 0.0) throw std::invalid_argument(std::string(what) + " must be nonnegative");
}

CoupledAssembler stationary_assembler(const CostOperator& cost, const ScalarField& rho) {
    const Grid g = rho.grid();
    const SpMat a = elliptic_matrix(g, 1.0);
    const Vec rhov = to_vec(rho);
    const auto n = static_cast<Eigen::Index>(g.size());
    const bool linear = !cost.is_local() || cost.a() == 0.0 || cost.p() == 1.0;
    const SpMat fixed_jac = linear ? cost.jacobian(ScalarField(g)) : SpMat(n, n);
    return [=](const Vec&, const Vec& m) {
        const ScalarField mf = to_field(g, m);
        return CoupledLinearization{a, Vec::Zero(n), a, rhov, to_vec(cost(mf)), linear ? fixed_jac : cost.jacobian(mf)};
    };
}

PenalizedTriple picard_solve(const CostOperator& cost, const ScalarField& rho, double epsilon,
                             const StationarySolveConfig& config, const ScalarField& m_start,
                             const ScalarField& alpha_start) {
    const Grid& g = rho.grid();
    const ScalarField zero(g);
    const double eta = config.alpha_step * epsilon;
    ScalarField m = m_start;
    ScalarField alpha = alpha_start;
    std::vector<double> history;
    for (int k = 1; k <= config.max_outer; ++k) {
        const ScalarField f = cost(m);
        const ScalarField u = solve_obstacle_penalized(f, zero, epsilon);
        const double dc = default_contact_threshold(u, zero);
        NodeMask active(g);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (u[i] > dc) {
                alpha[i] = 1.0;
            } else if (u[i] >= -dc) {
                alpha[i] = std::clamp(alpha[i] + eta * f[i], 0.0, 1.0);
            } else {
                alpha[i] = 0.0;
            }
            active.set(i, u[i] >= -dc);
        }
        const ScalarField mt = solve_density_penalized(KillingData{alpha, active, epsilon}, rho);
        const ScalarField next = (1.0 - config.damping) * m + config.damping * mt;
        const double step = sup_distance(next, m);
        m = next;
        history.push_back(step);
        if (step <= config.tol * (1.0 + m.max_abs())) {
            const ScalarField uf = solve_obstacle_penalized(cost(m), zero, epsilon);
            std::vector<NodeState> states(g.size(), NodeState::continuation);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (uf[i] > 0.0) states[i] = NodeState::stopping;
                else if (active[i]) states[i] = NodeState::mixed;
            }
            return PenalizedTriple{uf, m, alpha, epsilon, k, history, states, "picard"};
        }
    }
    throw ConvergenceError("damped Picard iteration did not converge", history);
}

}  // namespace

PenalizedTriple penalized_coupled_solve(const CostOperator& cost, const ScalarField& rho, double epsilon,
                                        const StationarySolveConfig& config, const PenalizedTriple* warm) {
    config.validate();
    if (epsilon < 0.0) throw std::invalid_argument("epsilon must be nonnegative");
    require_same_grid(cost.grid(), rho.grid(), "penalized_coupled_solve");
    require_nonnegative(rho, "rho");
    const Grid& g = rho.grid();
    const ScalarField zero(g);
    const bool limit = epsilon == 0.0;

    ScalarField m0 = warm ? warm->m : solve_density_on_set(NodeMask(g, true), rho);
    ScalarField u0(g);
    std::vector<NodeState> states;
    if (warm && warm->states.size() == g.size()) {
        u0 = warm->u;
        states = limit && warm->epsilon > 0.0 ? limit_states_from(warm->states) : warm->states;
        if (!limit && warm->epsilon == 0.0) states = states_from_value(to_vec(u0));
    } else {
        u0 = warm ? warm->u : (limit ? solve_obstacle_exact(cost(m0), zero) : solve_obstacle_penalized(cost(m0), zero, epsilon));
        states = states_from_value(to_vec(u0));
        if (limit) {
            const double dc = default_contact_threshold(u0, zero);
            for (std::size_t i = 0; i < g.size(); ++i) states[i] = u0[i] >= -dc ? NodeState::mixed : NodeState::continuation;
        }
    }

    if (config.scheme == CoupledScheme::active_set) {
        try {
            const CoupledSolution s = solve_coupled(stationary_assembler(cost, rho), epsilon, to_vec(u0), to_vec(m0),
                                                    states, CoupledOptions{config.tol, config.max_iter});
            return PenalizedTriple{to_field(g, s.v), to_field(g, s.m), to_field(g, s.alpha), epsilon,
                                   s.iterations, s.history, s.states, "active_set"};
        } catch (const ConvergenceError&) {
            if (!config.picard_fallback || limit) throw;
        }
    }
    if (limit) throw std::invalid_argument("the Picard scheme needs epsilon > 0");
    const ScalarField alpha0 = warm ? warm->alpha : ScalarField(g, 1.0);
    return picard_solve(cost, rho, epsilon, config, m0, alpha0);
}

std::vector<double> geometric_schedule(double eps0, double ratio, int stages) {
    if (!(eps0 > 0.0) || !(ratio > 0.0 && ratio < 1.0) || stages < 1) {
        throw std::invalid_argument("schedule needs eps0 > 0, ratio in (0, 1), stages >= 1");
    }
    std::vector<double> s;
    for (int j = 0; j < stages; ++j) s.push_back(eps0 * std::pow(ratio, j));
    return s;
}

ContinuationResult continuation_solve(const CostOperator& cost, const ScalarField& rho,
                                      const std::vector<double>& schedule, const StationarySolveConfig& config,
                                      const std::optional<ScalarField>& m_init, bool solve_limit) {
    if (schedule.empty()) throw std::invalid_argument("empty epsilon schedule");
    for (std::size_t j = 0; j < schedule.size(); ++j) {
        if (!(schedule[j] > 0.0) || (j > 0 && !(schedule[j] < schedule[j - 1]))) {
            throw std::invalid_argument("epsilon schedule must be positive and strictly decreasing");
        }
    }
    const Grid& g = rho.grid();
    std::optional<PenalizedTriple> cur;
    if (m_init) {
        require_same_grid(g, m_init->grid(), "continuation_solve");
        const ScalarField u = solve_obstacle_penalized(cost(*m_init), ScalarField(g), schedule.front());
        cur = PenalizedTriple{u, *m_init, ScalarField(g, 1.0), schedule.front(), 0, {}, states_from_value(to_vec(u)), ""};
    }

    ContinuationResult out{ScalarField(g), ScalarField(g), ScalarField(g), {}, false, {}};
    for (std::size_t j = 0; j < schedule.size(); ++j) {
        PenalizedTriple next = [&] {
            try {
                return penalized_coupled_solve(cost, rho, schedule[j], config, cur ? &*cur : nullptr);
            } catch (const ConvergenceError& e) {
                throw ConvergenceError("continuation stage " + std::to_string(j) + ": " + e.what(), e.history());
            }
        }();
        ContinuationStage stage;
        stage.epsilon = schedule[j];
        stage.iterations = next.iterations;
        stage.scheme = next.scheme;
        stage.report = verify_mixed(next.u, next.m, cost, rho, config.delta_c);
        if (j > 0) {
            stage.step_u = sup_distance(next.u, cur->u);
            stage.step_m = sup_distance(next.m, cur->m);
        }
        out.stages.push_back(stage);
        cur = std::move(next);
    }
    if (solve_limit) {
        try {
            cur = penalized_coupled_solve(cost, rho, 0.0, config, &*cur);
            out.limit_solved = true;
        } catch (const ConvergenceError&) {
            out.limit_solved = false;
        }
    }
    out.u = cur->u;
    out.m = cur->m;
    out.alpha = cur->alpha;
    out.report = verify_mixed(out.u, out.m, cost, rho, config.delta_c);
    return out;
}

MonotoneIterationResult monotone_iteration_solve(const CostOperator& cost, const ScalarField& rho,
                                                 const MonotoneIterationConfig& config) {
    if (cost.monotonicity() != Monotonicity::anti_monotone) {
        throw std::invalid_argument("monotone iteration needs an order-reversing (anti_monotone) cost");
    }
    require_nonnegative(rho, "rho");
    const Grid& g = rho.grid();
    const ScalarField zero(g);
    MonotoneIterationResult out{ScalarField(g), ScalarField(g), 0, {}, 0.0, 0.0};
    std::optional<ScalarField> u_prev;
    for (int n = 1; n <= config.max_iter; ++n) {
        const ScalarField u = solve_obstacle_exact(cost(out.m), zero);
        const double dc = config.delta_c < 0.0 ? default_contact_threshold(u, zero) : config.delta_c;
        const ScalarField next = solve_density_on_set(classify_nodes(u, zero, dc).continuation, rho);
        for (std::size_t i = 0; i < g.size(); ++i) {
            out.max_m_decrease = std::max(out.max_m_decrease, out.m[i] - next[i]);
            if (u_prev) out.max_u_increase = std::max(out.max_u_increase, u[i] - (*u_prev)[i]);
        }
        if (out.max_m_decrease > config.order_tol || out.max_u_increase > config.order_tol) {
            throw std::runtime_error("monotone iteration lost its ordering at step " + std::to_string(n) +
                                     "; the cost may be mis-tagged or delta_c too large");
        }
        const double step = sup_distance(next, out.m);
        out.m_steps.push_back(step);
        out.m = next;
        out.u = u;
        out.iterations = n;
        u_prev = u;
        if (step <= config.tol * (1.0 + out.m.max_abs())) {
            out.u = solve_obstacle_exact(cost(out.m), zero);
            return out;
        }
    }
    throw ConvergenceError("monotone iteration did not converge", out.m_steps);
}

namespace {

struct AugmentedLagrangian {
    const PotentialOperator& potential;
    const SpMat& a;
    const Vec& rho;
    const Vec& lambda;
    double mu;
    double hv;

    Vec multiplier(const Vec& m) const { return (lambda + mu * (a * m - rho)).cwiseMax(0.0); }

    double value(const Vec& m) const {
        double s = potential.integral(to_field(potential.cost().grid(), m));
        s += hv / (2.0 * mu) * (multiplier(m).squaredNorm() - lambda.squaredNorm());
        return s;
    }

    Vec gradient(const Vec& m) const {
        return hv * (to_vec(potential.cost()(to_field(potential.cost().grid(), m))) + a * multiplier(m));
    }
};

}  // namespace

VariationalResult variational_minimize(const PotentialOperator& potential, const ScalarField& rho,
                                       const VariationalConfig& config) {
    if (!potential.strictly_convex()) throw std::invalid_argument("variational_minimize needs a strictly convex potential");
    require_nonnegative(rho, "rho");
    const Grid& g = rho.grid();
    require_same_grid(g, potential.cost().grid(), "variational_minimize");
    const auto n = static_cast<Eigen::Index>(g.size());
    const SpMat a = elliptic_matrix(g, 1.0);
    const Vec rhov = to_vec(rho);
    const double hv = g.cell_volume();
    const double scale = 1.0 + rhov.cwiseAbs().maxCoeff();
    double a_norm = 0.0;
    for (Eigen::Index c = 0; c < a.outerSize(); ++c) {
        for (SpMat::InnerIterator itr(a, c); itr; ++itr) a_norm = std::max(a_norm, std::abs(itr.value()));
    }

    Vec m = Vec::Zero(n);
    Vec lambda = Vec::Zero(n);
    double mu = config.penalty;
    double prev_feas = std::numeric_limits<double>::infinity();
    VariationalResult out{ScalarField(g), ScalarField(g), 0.0, 0.0, 0.0, 0, 0.0, 0};

    for (int outer = 1; outer <= config.max_outer; ++outer) {
        AugmentedLagrangian al{potential, a, rhov, lambda, mu, hv};
        // Projected Newton on the box m >= 0.
        double pg_norm = 0.0;
        for (int inner = 0; inner < config.max_inner; ++inner) {
            const Vec grad = al.gradient(m);
            // Round-off in f + A lambda scales with the size of the two terms.
            const double gscale = 1.0 + std::abs(grad.cwiseAbs().maxCoeff()) / hv +
                                  a_norm * al.multiplier(m).cwiseAbs().maxCoeff();
            pg_norm = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (m[i] > 0.0 || grad[i] < 0.0) pg_norm = std::max(pg_norm, std::abs(grad[i]) / hv);
            }
            pg_norm /= gscale;
            if (pg_norm <= config.grad_tol) break;
            const double bind_tol = std::min(1e-12, pg_norm);
            std::vector<char> bound(static_cast<std::size_t>(n), 0);
            for (Eigen::Index i = 0; i < n; ++i) bound[i] = m[i] <= bind_tol && grad[i] > 0.0;

            const Vec mult = lambda + mu * (a * m - rhov);
            Vec dmask(n);
            for (Eigen::Index i = 0; i < n; ++i) dmask[i] = mult[i] > 0.0 ? 1.0 : 0.0;
            const Vec fprime = to_vec(potential.cost().local_derivative(to_field(g, m)));
            SpMat hess = SpMat(a.transpose()) * dmask.asDiagonal() * a * (mu * hv);
            Triplets t;
            for (Eigen::Index c = 0; c < hess.outerSize(); ++c) {
                for (SpMat::InnerIterator itr(hess, c); itr; ++itr) {
                    if (!bound[itr.row()] && !bound[itr.col()]) t.emplace_back(itr.row(), itr.col(), itr.value());
                }
            }
            Vec rhs(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                if (bound[i]) {
                    t.emplace_back(i, i, 1.0);
                    rhs[i] = 0.0;
                } else {
                    t.emplace_back(i, i, hv * fprime[i]);
                    rhs[i] = -grad[i];
                }
            }
            SpMat sys(n, n);
            sys.setFromTriplets(t.begin(), t.end());
            Vec dir = sparse_solve(sys, rhs);
            for (Eigen::Index i = 0; i < n; ++i) {
                if (bound[i]) dir[i] = -grad[i] / (hv * (fprime[i] + mu * a.coeff(i, i) * a.coeff(i, i)));
            }
            const double phi0 = al.value(m);
            // Near the optimum the decrease drops below the rounding of phi.
            const double slack = 1e-13 * (1.0 + std::abs(phi0));
            double step = 1.0;
            Vec trial = m;
            for (int ls = 0; ls < 60; ++ls) {
                trial = (m + step * dir).cwiseMax(0.0);
                if (al.value(trial) <= phi0 + 1e-4 * grad.dot(trial - m) + slack) break;
                step *= 0.5;
            }
            if ((trial - m).cwiseAbs().maxCoeff() == 0.0) break;
            m = trial;
        }
        const Vec c = a * m - rhov;
        const Vec next = (lambda + mu * c).cwiseMax(0.0);
        const double feas = c.cwiseMax(0.0).maxCoeff();
        const double dl = (next - lambda).cwiseAbs().maxCoeff();
        lambda = next;
        out.outer_iterations = outer;
        out.stationarity = pg_norm;
        out.feasibility = feas;
        if (feas <= config.feas_tol * scale && dl <= config.feas_tol * scale * std::max(1.0, mu) &&
            pg_norm <= config.grad_tol) {
            break;
        }
        if (feas > config.feas_tol * scale && feas > 0.25 * prev_feas) mu = std::min(mu * 10.0, 1e6);
        prev_feas = feas;
        if (outer == config.max_outer) {
            throw ConvergenceError("augmented Lagrangian did not converge (feasibility " + std::to_string(feas) + ")",
                                   {feas, pg_norm});
        }
    }
    out.m = to_field(g, m);
    out.u = to_field(g, -lambda);
    out.objective = potential.integral(out.m);
    out.feasibility = std::max(out.feasibility, std::max(0.0, -m.minCoeff()));

    const ScalarField f = potential.cost()(out.m);
    const auto battery = feasible_battery(rho, out.m, config.seed, config.random_sets);
    out.battery_size = battery.size();
    out.euler_lagrange_min = std::numeric_limits<double>::infinity();
    for (const auto& mp : battery) out.euler_lagrange_min = std::min(out.euler_lagrange_min, inner(f, mp - out.m));
    return out;
}

std::vector<ScalarField> feasible_battery(const ScalarField& rho, const ScalarField& m, std::uint64_t seed,
                                          int random_sets) {
    const Grid& g = rho.grid();
    std::vector<ScalarField> base{ScalarField(g), solve_density_on_set(NodeMask(g, true), rho)};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int s = 0; s < random_sets; ++s) {
        const double keep = 0.2 + 0.6 * unit(rng);
        NodeMask omega(g);
        for (std::size_t i = 0; i < g.size(); ++i) omega.set(i, unit(rng) < keep);
        base.push_back(solve_density_on_set(omega, rho));
    }
    std::vector<ScalarField> out = base;
    for (const auto& b : base) {
        out.push_back(0.5 * m + 0.5 * b);
        out.push_back(0.9 * m + 0.1 * b);
        out.push_back(0.99 * m + 0.01 * b);
    }
    return out;
}

ScalarField random_start(const ScalarField& rho, std::uint64_t seed) {
    const Grid& g = rho.grid();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double s = 2.0 * unit(rng);
    ScalarField m = solve_density_on_set(NodeMask(g, true), rho);
    for (std::size_t i = 0; i < g.size(); ++i) m[i] *= s * (1.0 + 0.5 * (2.0 * unit(rng) - 1.0));
    return m;
}

std::vector<std::uint64_t> consecutive_seeds(std::uint64_t seed, int n_starts) {
    if (n_starts < 2) throw std::invalid_argument("a uniqueness probe needs at least two starts");
    std::vector<std::uint64_t> s;
    for (int i = 0; i < n_starts; ++i) s.push_back(seed + static_cast<std::uint64_t>(i));
    return s;
}

double uniqueness_probe(const CostOperator& cost, const ScalarField& rho, const std::vector<std::uint64_t>& seeds,
                        const StationarySolveConfig& config, int threads) {
    if (seeds.size() < 2) throw std::invalid_argument("a uniqueness probe needs at least two starts");
    const auto schedule = geometric_schedule();
    const auto ms = parallel_map<ScalarField>(seeds.size(), threads, [&](std::size_t i) {
        return continuation_solve(cost, rho, schedule, config, random_start(rho, seeds[i])).m;
    });
    double gap = 0.0;
    for (std::size_t i = 0; i < ms.size(); ++i) {
        for (std::size_t j = i + 1; j < ms.size(); ++j) gap = std::max(gap, sup_distance(ms[i], ms[j]));
    }
    return gap;
}

}  // namespace mfgstop
