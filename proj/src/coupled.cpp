#include "mfgstop/coupled.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "mfgstop/errors.hpp"

namespace mfgstop {

namespace {

using RowMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

void append_row(Triplets& t, const RowMat& mat, Eigen::Index src_row, Eigen::Index dst_row, Eigen::Index col_offset,
                double scale) {
    for (RowMat::InnerIterator it(mat, src_row); it; ++it) {
        t.emplace_back(dst_row, it.col() + col_offset, scale * it.value());
    }
}

std::string state_key(const std::vector<NodeState>& s) {
    std::string key(s.size(), '0');
    for (std::size_t i = 0; i < s.size(); ++i) key[i] = static_cast<char>('0' + static_cast<int>(s[i]));
    return key;
}

struct Measures {
    double residual = 0.0;
    double violation = 0.0;
};

void fill_alpha(CoupledSolution& sol, double epsilon) {
    const Eigen::Index n = sol.m.size();
    sol.alpha = Vec::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const NodeState s = sol.states[static_cast<std::size_t>(i)];
        if (s == NodeState::stopping) {
            sol.alpha[i] = 1.0;
        } else if (s == NodeState::mixed) {
            sol.alpha[i] = epsilon == 0.0 || sol.m[i] <= 0.0 ? 1.0
                                                             : std::clamp(epsilon * sol.kill[i] / sol.m[i], 0.0, 1.0);
        }
    }
}

}  // namespace

std::vector<NodeState> states_from_value(const Vec& v) {
    std::vector<NodeState> s(static_cast<std::size_t>(v.size()), NodeState::continuation);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v[i] > 0.0) s[static_cast<std::size_t>(i)] = NodeState::stopping;
    }
    return s;
}

std::vector<NodeState> limit_states_from(const std::vector<NodeState>& penalized) {
    std::vector<NodeState> s = penalized;
    for (auto& x : s) {
        if (x == NodeState::stopping) x = NodeState::mixed;
    }
    return s;
}

namespace {

CoupledSolution active_set(const CoupledAssembler& assemble, double epsilon, const Vec& v0, const Vec& m0,
                           const std::vector<NodeState>& initial_states, const CoupledOptions& options) {
    const Eigen::Index n = v0.size();
    const bool limit = epsilon == 0.0;
    const double pen = limit ? 0.0 : 1.0 / epsilon;

    CoupledSolution sol;
    sol.v = v0;
    sol.m = m0;
    sol.states = initial_states;
    CoupledLinearization lin = assemble(sol.v, sol.m);
    std::map<std::string, int> visits;

    for (int it = 1; it <= options.max_iter; ++it) {
        const RowMat lu = lin.lu;
        const RowMat lm = lin.lm;
        const RowMat jac = lin.jac;
        const Vec jm = lin.jac * sol.m;
        Triplets t;
        t.reserve(static_cast<std::size_t>(lu.nonZeros() + lm.nonZeros() + jac.nonZeros() + 4 * n));
        Vec rhs = Vec::Zero(2 * n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const NodeState s = sol.states[static_cast<std::size_t>(i)];
            auto u_row = [&](Eigen::Index row) {
                append_row(t, lu, i, row, 0, 1.0);
                append_row(t, jac, i, row, n, -1.0);
                rhs[row] = lin.bu[i] + lin.f[i] - jm[i];
            };
            if (s == NodeState::continuation || (s == NodeState::stopping && !limit)) {
                u_row(i);
                append_row(t, lm, i, n + i, n, 1.0);
                rhs[n + i] = lin.bm[i];
                if (s == NodeState::stopping) {
                    t.emplace_back(i, i, pen);
                    t.emplace_back(n + i, n + i, pen);
                }
            } else if (s == NodeState::mixed) {
                t.emplace_back(i, i, 1.0);
                u_row(n + i);
            } else {
                t.emplace_back(i, i, 1.0);
                t.emplace_back(n + i, n + i, 1.0);
            }
        }
        SpMat sys(2 * n, 2 * n);
        sys.setFromTriplets(t.begin(), t.end());
        Eigen::SparseLU<SpMat> factor(sys);
        if (factor.info() != Eigen::Success) {
            // With a nonlocal cost the density of mixed nodes may enter only through
            // a low-rank Jacobian; mixed nodes carrying almost no mass then stop.
            bool demoted = false;
            if (limit) {
                const double small = 1e-8 * (1.0 + sol.m.cwiseAbs().maxCoeff());
                for (Eigen::Index i = 0; i < n; ++i) {
                    auto& st = sol.states[static_cast<std::size_t>(i)];
                    if (st == NodeState::mixed && sol.m[i] <= small) {
                        st = NodeState::stopping;
                        demoted = true;
                    }
                }
            }
            if (!demoted) throw ConvergenceError("coupled active-set system is singular", sol.history);
            continue;
        }
        const Vec x = factor.solve(rhs);
        sol.v = x.head(n);
        sol.m = x.tail(n);
        lin = assemble(sol.v, sol.m);

        const Vec lu_v = lin.lu * sol.v;
        const Vec lm_m = lin.lm * sol.m;
        sol.kill = Vec::Zero(n);
        const double scale = 1.0 + lin.bu.cwiseAbs().maxCoeff() + lin.bm.cwiseAbs().maxCoeff() +
                             lin.f.cwiseAbs().maxCoeff();
        const double thr = 1e-14 * (scale + sol.v.cwiseAbs().maxCoeff() + sol.m.cwiseAbs().maxCoeff());
        Measures meas;
        std::vector<NodeState> next = sol.states;
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto si = static_cast<std::size_t>(i);
            const NodeState s = sol.states[si];
            const double vi = sol.v[i];
            const double mi = sol.m[i];
            const double ru = lu_v[i] - lin.f[i] - lin.bu[i] + (s == NodeState::stopping ? pen * vi : 0.0);
            const double rm = lm_m[i] - lin.bm[i] + (s == NodeState::stopping ? pen * mi : 0.0);
            if (!(limit && s == NodeState::stopping)) meas.residual = std::max(meas.residual, std::abs(ru));
            if (s == NodeState::continuation || (s == NodeState::stopping && !limit)) {
                meas.residual = std::max(meas.residual, std::abs(rm));
            }
            if (s == NodeState::mixed || (limit && s == NodeState::stopping)) sol.kill[i] = lin.bm[i] - lm_m[i];
            if (s == NodeState::stopping && !limit) sol.kill[i] = pen * mi;
            const double k = sol.kill[i];

            if (!limit) {
                if (s == NodeState::continuation && vi > thr) next[si] = NodeState::stopping;
                if (s == NodeState::stopping && vi < -thr) next[si] = NodeState::mixed;
                if (s == NodeState::mixed) {
                    if (k < -thr) next[si] = NodeState::continuation;
                    else if (k > pen * mi + thr) next[si] = NodeState::stopping;
                }
                if (s == NodeState::continuation) meas.violation = std::max(meas.violation, vi);
                if (s == NodeState::stopping) meas.violation = std::max(meas.violation, -vi);
                if (s == NodeState::mixed) meas.violation = std::max({meas.violation, -k, k - pen * mi});
            } else {
                const double mu = lin.f[i] + lin.bu[i] - lu_v[i];
                if (s == NodeState::continuation && vi > thr) next[si] = NodeState::mixed;
                if (s == NodeState::mixed) {
                    if (k < -thr) next[si] = NodeState::continuation;
                    else if (mi < -thr) next[si] = NodeState::stopping;
                }
                if (s == NodeState::stopping && mu < -thr) next[si] = NodeState::mixed;
                if (s == NodeState::continuation) meas.violation = std::max(meas.violation, vi);
                if (s == NodeState::mixed) meas.violation = std::max({meas.violation, -k, -mi});
                if (s == NodeState::stopping) meas.violation = std::max(meas.violation, -mu);
            }
        }
        sol.residual = meas.residual / scale;
        sol.history.push_back(std::max(sol.residual, meas.violation / scale));
        sol.iterations = it;
        const bool settled = next == sol.states;
        if (settled && sol.residual <= options.tol) break;
        if (!settled) {
            // The active set returned to an earlier configuration: accept the iterate
            // if it already satisfies the system, otherwise report the cycle.
            if (++visits[state_key(next)] > 3) {
                if (sol.residual <= options.tol && meas.violation <= 1e-8 * scale) break;
                throw ConvergenceError("coupled active-set iteration is cycling", sol.history);
            }
            sol.states = std::move(next);
        }
        if (it == options.max_iter) {
            throw ConvergenceError("coupled active-set iteration reached the iteration limit", sol.history);
        }
    }

    fill_alpha(sol, epsilon);
    return sol;
}

// Semismooth Newton for the value alone: lu v + (1/eps) v^+ = r, or
// max(lu v - r, v) = 0 when eps == 0.
Vec value_solve(const SpMat& lu, const Vec& r, double epsilon, Vec v, const CoupledOptions& options) {
    const Eigen::Index n = r.size();
    const double pen = epsilon > 0.0 ? 1.0 / epsilon : 0.0;
    const double scale = 1.0 + r.cwiseAbs().maxCoeff();
    std::vector<double> history;
    for (int it = 0;; ++it) {
        const Vec lv = lu * v - r;
        Vec res(n);
        std::vector<bool> pinned(static_cast<std::size_t>(n), false);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (epsilon > 0.0) {
                res[i] = lv[i] + pen * std::max(v[i], 0.0);
            } else {
                pinned[static_cast<std::size_t>(i)] = v[i] > lv[i];
                res[i] = std::max(lv[i], v[i]);
            }
        }
        history.push_back(res.cwiseAbs().maxCoeff() / scale);
        if (history.back() <= 1e-3 * options.tol) return v;
        if (it >= options.max_iter) throw ConvergenceError("value solve did not converge", history);
        Triplets t;
        for (int c = 0; c < lu.outerSize(); ++c) {
            for (SpMat::InnerIterator e(lu, c); e; ++e) {
                if (!pinned[static_cast<std::size_t>(e.row())]) t.emplace_back(e.row(), e.col(), e.value());
            }
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            if (pinned[static_cast<std::size_t>(i)]) t.emplace_back(i, i, 1.0);
            else if (epsilon > 0.0 && v[i] > 0.0) t.emplace_back(i, i, pen);
        }
        SpMat sys(n, n);
        sys.setFromTriplets(t.begin(), t.end());
        v -= sparse_solve(sys, res);
    }
}

double max_step(const Vec& x, const Vec& dx) {
    double a = 1.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (dx[i] < 0.0) a = std::min(a, -x[i] / dx[i]);
    }
    return a;
}

// Primal-dual interior-point solve of the same system, written as the
// optimality conditions of
//   min Phi(m) + <bu, m>  s.t.  lm m + k = bm,  k >= 0,  m - eps k >= 0,
// with f = grad Phi. Multipliers z (k >= 0) and y (m - eps k >= 0) give v = eps y - z.
// The value argument of the assembler is frozen at v0.
CoupledSolution interior_point(const CoupledAssembler& assemble, double epsilon, const Vec& v0, const Vec& m0,
                               const CoupledOptions& options) {
    const Eigen::Index n = m0.size();
    CoupledLinearization lin = assemble(v0, m0);
    const double scale =
        1.0 + lin.bu.cwiseAbs().maxCoeff() + lin.bm.cwiseAbs().maxCoeff() + lin.f.cwiseAbs().maxCoeff();
    const double shift = 0.1 * (1.0 + m0.cwiseAbs().maxCoeff());
    Vec m = m0.cwiseMax(0.0) + Vec::Constant(n, shift);
    lin = assemble(v0, m);
    Vec k = (lin.bm - lin.lm * m).cwiseMax(0.0) + Vec::Constant(n, shift);
    if (epsilon > 0.0) k = k.cwiseMin(0.5 * m / epsilon);
    Vec z = Vec::Constant(n, 1.0);
    Vec y = Vec::Constant(n, 1.0);

    CoupledSolution sol;
    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    bool analyzed = false;
    for (int it = 1;; ++it) {
        const Vec s = m - epsilon * k;
        const Vec v = epsilon * y - z;
        const Vec r1 = lin.f + lin.bu - lin.lu * v - y;
        const Vec r2 = lin.lm * m + k - lin.bm;
        const double mu = (k.dot(z) + s.dot(y)) / static_cast<double>(2 * n);
        const double res = std::max(r1.cwiseAbs().maxCoeff(), r2.cwiseAbs().maxCoeff()) / scale;
        const double comp =
            std::max(k.cwiseProduct(z).maxCoeff(), s.cwiseProduct(y).maxCoeff()) / scale;
        sol.history.push_back(std::max(res, comp));
        sol.iterations = it;
        if (res <= 1e-3 * options.tol && comp <= 1e-3 * options.tol) break;
        if (it > options.max_iter) {
            throw ConvergenceError("coupled interior-point iteration reached the iteration limit", sol.history);
        }

        Triplets t;
        t.reserve(static_cast<std::size_t>(lin.jac.nonZeros() + 3 * lin.lu.nonZeros() + 8 * n));
        for (int outer = 0; outer < lin.jac.outerSize(); ++outer) {
            for (SpMat::InnerIterator e(lin.jac, outer); e; ++e) t.emplace_back(e.row(), e.col(), e.value());
        }
        for (int outer = 0; outer < lin.lu.outerSize(); ++outer) {
            for (SpMat::InnerIterator e(lin.lu, outer); e; ++e) {
                t.emplace_back(e.row(), 2 * n + e.col(), e.value());
                if (epsilon > 0.0) t.emplace_back(e.row(), 3 * n + e.col(), -epsilon * e.value());
            }
        }
        for (int outer = 0; outer < lin.lm.outerSize(); ++outer) {
            for (SpMat::InnerIterator e(lin.lm, outer); e; ++e) t.emplace_back(n + e.row(), e.col(), e.value());
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            t.emplace_back(i, 3 * n + i, -1.0);
            t.emplace_back(n + i, n + i, 1.0);
            t.emplace_back(2 * n + i, n + i, z[i]);
            t.emplace_back(2 * n + i, 2 * n + i, k[i]);
            t.emplace_back(3 * n + i, i, y[i]);
            if (epsilon > 0.0) t.emplace_back(3 * n + i, n + i, -epsilon * y[i]);
            t.emplace_back(3 * n + i, 3 * n + i, s[i]);
        }
        SpMat sys(4 * n, 4 * n);
        sys.setFromTriplets(t.begin(), t.end());
        if (!analyzed) {
            lu.analyzePattern(sys);
            analyzed = true;
        }
        lu.factorize(sys);
        if (lu.info() != Eigen::Success) {
            throw ConvergenceError("coupled interior-point system is singular", sol.history);
        }

        auto split = [n](const Vec& d, Vec& dm, Vec& dk, Vec& dz, Vec& dy) {
            dm = d.segment(0, n);
            dk = d.segment(n, n);
            dz = d.segment(2 * n, n);
            dy = d.segment(3 * n, n);
        };
        auto boundary_step = [&](const Vec& dm, const Vec& dk, const Vec& dz, const Vec& dy) {
            return std::min({max_step(k, dk), max_step(s, dm - epsilon * dk), max_step(z, dz), max_step(y, dy)});
        };

        Vec rhs(4 * n);
        rhs << -r1, -r2, -k.cwiseProduct(z), -s.cwiseProduct(y);
        Vec dm, dk, dz, dy;
        split(lu.solve(rhs), dm, dk, dz, dy);
        const double a_aff = boundary_step(dm, dk, dz, dy);
        const Vec ds = dm - epsilon * dk;
        const double mu_aff = ((k + a_aff * dk).dot(z + a_aff * dz) + (s + a_aff * ds).dot(y + a_aff * dy)) /
                              static_cast<double>(2 * n);
        const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

        rhs.segment(2 * n, n) = -k.cwiseProduct(z) - dk.cwiseProduct(dz) + Vec::Constant(n, sigma * mu);
        rhs.segment(3 * n, n) = -s.cwiseProduct(y) - ds.cwiseProduct(dy) + Vec::Constant(n, sigma * mu);
        split(lu.solve(rhs), dm, dk, dz, dy);
        const double a = std::min(1.0, 0.995 * boundary_step(dm, dk, dz, dy));
        m += a * dm;
        k += a * dk;
        z += a * dz;
        y += a * dy;
        lin = assemble(v0, m);
    }

    sol.v = epsilon * y - z;
    sol.m = m;
    sol.kill = k;
    const Vec s = m - epsilon * k;
    sol.states.assign(static_cast<std::size_t>(n), NodeState::mixed);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (k[i] < z[i]) sol.states[static_cast<std::size_t>(i)] = NodeState::continuation;
        else if (s[i] < y[i]) sol.states[static_cast<std::size_t>(i)] = NodeState::stopping;
    }
    sol.residual = sol.history.back();
    fill_alpha(sol, epsilon);
    return sol;
}

}  // namespace

CoupledSolution solve_coupled(const CoupledAssembler& assemble, double epsilon, const Vec& v0, const Vec& m0,
                              const std::vector<NodeState>& initial_states, const CoupledOptions& options) {
    if (epsilon < 0.0) throw std::invalid_argument("epsilon must be nonnegative");
    const Eigen::Index n = v0.size();
    if (m0.size() != n || initial_states.size() != static_cast<std::size_t>(n)) {
        throw std::invalid_argument("coupled solve: inconsistent initial data");
    }
    CoupledOptions quick = options;
    quick.max_iter = std::min(options.max_iter, 25);
    std::vector<double> history;
    try {
        return active_set(assemble, epsilon, v0, m0, initial_states, quick);
    } catch (const ConvergenceError& e) {
        history = e.history();
    }
    CoupledSolution interior = interior_point(assemble, epsilon, v0, m0, options);
    // The interior-point multipliers fix the value only where m > 0; recompute it
    // from the value equation for the computed density and re-derive the regimes.
    const CoupledLinearization lin = assemble(interior.v, interior.m);
    const Vec v = value_solve(lin.lu, lin.f + lin.bu, epsilon, interior.v, options);
    const double thr = 1e-12 * (1.0 + v.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < n; ++i) {
        NodeState& st = interior.states[static_cast<std::size_t>(i)];
        if (v[i] < -thr) st = NodeState::continuation;
        else if (v[i] > thr && epsilon > 0.0) st = NodeState::stopping;
    }
    interior.v = v;
    try {
        CoupledSolution polished = active_set(assemble, epsilon, interior.v, interior.m, interior.states, quick);
        polished.iterations += interior.iterations + static_cast<int>(history.size());
        return polished;
    } catch (const ConvergenceError&) {
    }
    // Degenerate nodes (v and the killing both vanishing) can keep the active
    // set from settling; the interior-point pair is returned in that case.
    interior.iterations += static_cast<int>(history.size());
    return interior;
}

}  // namespace mfgstop
