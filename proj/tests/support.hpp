#pragma once

#include <random>

#include <Eigen/Dense>

#include "mfgstop/control.hpp"
#include "mfgstop/grid.hpp"

namespace testsupport {

using mfgstop::Grid;
using mfgstop::ScalarField;

/// Dense -Delta_h + c0 I built from the stencil definition, independent of
/// the library assembly.
inline Eigen::MatrixXd dense_elliptic(const Grid& g, double c0) {
    const auto n = static_cast<Eigen::Index>(g.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto idx = g.multi_index(i);
        a(i, i) = c0;
        for (int ax = 0; ax < g.dim(); ++ax) {
            const double w = 1.0 / (g.h(ax) * g.h(ax));
            a(i, i) += 2.0 * w;
            for (int s : {-1, 1}) {
                auto nb = idx;
                nb[ax] += s;
                if (nb[ax] < 0 || nb[ax] >= g.n(ax)) continue;
                a(i, g.flat_index(nb[0], nb[1])) -= w;
            }
        }
    }
    return a;
}

inline Eigen::VectorXd vec(const ScalarField& f) {
    return Eigen::Map<const Eigen::VectorXd>(f.data().data(), static_cast<Eigen::Index>(f.size()));
}

inline ScalarField field(const Grid& g, const Eigen::VectorXd& v) {
    return ScalarField(g, std::vector<double>(v.data(), v.data() + v.size()));
}

inline ScalarField random_field(const Grid& g, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    ScalarField f(g);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = d(rng);
    return f;
}

/// Dense solve of the discrete obstacle problem for a known contact set:
/// u = psi on `contact`, A u = f elsewhere.
inline ScalarField dense_obstacle_on_set(const ScalarField& f, const ScalarField& psi, const std::vector<bool>& contact,
                                         double c0) {
    const Grid& g = f.grid();
    Eigen::MatrixXd a = dense_elliptic(g, c0);
    Eigen::VectorXd b = vec(f);
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!contact[i]) continue;
        a.row(static_cast<Eigen::Index>(i)).setZero();
        a(i, i) = 1.0;
        b(i) = psi[i];
    }
    return field(g, a.fullPivLu().solve(b));
}

/// Exhaustive obstacle oracle: returns every contact set whose solution
/// satisfies max(A u - f, u - psi) = 0 to `tol`.
inline std::vector<ScalarField> enumerate_obstacle(const ScalarField& f, const ScalarField& psi, double c0,
                                                   double tol = 1e-10) {
    const Grid& g = f.grid();
    const Eigen::MatrixXd a = dense_elliptic(g, c0);
    std::vector<ScalarField> out;
    const std::size_t n = g.size();
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
        std::vector<bool> contact(n);
        for (std::size_t i = 0; i < n; ++i) contact[i] = (mask >> i) & 1U;
        const ScalarField u = dense_obstacle_on_set(f, psi, contact, c0);
        const Eigen::VectorXd au = a * vec(u);
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i) {
            const double r = std::max(au(i) - f[i], u[i] - psi[i]);
            ok = std::abs(r) <= tol * (1.0 + std::abs(f[i]));
        }
        if (ok) out.push_back(u);
    }
    return out;
}

/// Objective gaps J(perturbed) - J(solver) for `count` feasible controls.
/// Perturbation t blends the solver drift with a random drift of speed at most
/// 0.9 beta (weight 0.1 + 0.2 t) and transports m0 with the solver's killing rate.
inline std::vector<double> perturbed_objective_gaps(const mfgstop::ControlTriple& sol, const ScalarField& m0,
                                                   const mfgstop::PotentialOperator& potential,
                                                   const mfgstop::Hamiltonian& ham, std::uint64_t seed, int count) {
    const Grid& g = m0.grid();
    const mfgstop::TimeGrid& tg = sol.m.timegrid();
    const double base = mfgstop::control_objective(sol.m, sol.drift, potential, ham);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> gaps;
    for (int t = 0; t < count; ++t) {
        std::vector<mfgstop::UpwindDrift> drift = sol.drift;
        const double weight = 0.1 + 0.2 * t;
        for (int k = 1; k <= tg.n_steps(); ++k) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                std::array<double, 4> target{};
                double speed = 0.0;
                for (int a = 0; a < g.dim(); ++a) {
                    target[2 * a] = unit(rng);
                    target[2 * a + 1] = unit(rng);
                    speed += target[2 * a] * target[2 * a] + target[2 * a + 1] * target[2 * a + 1];
                }
                const double scale = 0.9 * ham.beta()[i] / std::max(std::sqrt(speed), 1.0);
                for (int a = 0; a < g.dim(); ++a) {
                    double& back = drift[k].back[a][i];
                    double& fwd = drift[k].fwd[a][i];
                    back = (1.0 - weight) * back + weight * scale * target[2 * a];
                    fwd = (1.0 - weight) * fwd + weight * scale * target[2 * a + 1];
                }
            }
        }
        const auto m = mfgstop::solve_density_parabolic(m0, sol.killing_rate, drift, tg);
        gaps.push_back(mfgstop::control_objective(m, drift, potential, ham) - base);
    }
    return gaps;
}

}  // namespace testsupport
