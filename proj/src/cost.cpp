#include "mfgstop/cost.hpp"

#include <cmath>
#include <stdexcept>

namespace mfgstop {

std::string to_string(CostKind kind) {
    switch (kind) {
        case CostKind::local_power: return "local_power";
        case CostKind::nonlocal_affine: return "nonlocal_affine";
        case CostKind::local_affine_shifted: return "local_affine_shifted";
    }
    return "unknown";
}

std::string to_string(Monotonicity tag) {
    switch (tag) {
        case Monotonicity::strict_monotone: return "strict_monotone";
        case Monotonicity::anti_monotone: return "anti_monotone";
        case Monotonicity::neither: return "neither";
    }
    return "unknown";
}

CostOperator::CostOperator(CostKind kind, ScalarField offset, ScalarField weight)
    : kind_(kind), offset_(std::move(offset)), weight_(std::move(weight)) {
    require_same_grid(offset_.grid(), weight_.grid(), "CostOperator");
}

CostOperator CostOperator::local_power(double a, double p, ScalarField f0) {
    if (!(p >= 1.0)) throw std::invalid_argument("local_power exponent must be >= 1");
    if (!std::isfinite(a)) throw std::invalid_argument("local_power coefficient must be finite");
    const Grid g = f0.grid();
    CostOperator c(CostKind::local_power, std::move(f0), ScalarField(g));
    c.a_ = a;
    c.p_ = p;
    c.monotonicity_ = a > 0.0 ? Monotonicity::strict_monotone : Monotonicity::anti_monotone;
    return c;
}

CostOperator CostOperator::nonlocal_affine(ScalarField c0, double c1, ScalarField weight) {
    if (!std::isfinite(c1)) throw std::invalid_argument("nonlocal_affine coefficient must be finite");
    CostOperator c(CostKind::nonlocal_affine, std::move(c0), std::move(weight));
    c.c1_ = c1;
    const bool nonneg_weight = c.weight_.min() >= 0.0;
    if (c1 == 0.0 || (c1 < 0.0 && nonneg_weight)) c.monotonicity_ = Monotonicity::anti_monotone;
    return c;
}

CostOperator CostOperator::local_affine_shifted(ScalarField base, ScalarField m_ref) {
    require_same_grid(base.grid(), m_ref.grid(), "local_affine_shifted");
    CostOperator c = local_power(1.0, 1.0, base - m_ref);
    c.kind_ = CostKind::local_affine_shifted;
    return c;
}

CostOperator CostOperator::constant(ScalarField value) { return local_power(0.0, 1.0, std::move(value)); }

ScalarField CostOperator::operator()(const ScalarField& m) const {
    require_same_grid(m.grid(), grid(), "cost evaluation");
    ScalarField out = offset_;
    if (kind_ == CostKind::nonlocal_affine) {
        const double s = c1_ * inner(weight_, m);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += s;
        return out;
    }
    if (a_ == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double mi = m[i];
        out[i] += p_ == 1.0 ? a_ * mi : a_ * std::pow(std::abs(mi), p_ - 1.0) * mi;
    }
    return out;
}

ScalarField CostOperator::local_derivative(const ScalarField& m) const {
    require_same_grid(m.grid(), grid(), "cost derivative");
    ScalarField d(grid());
    if (kind_ == CostKind::nonlocal_affine || a_ == 0.0) return d;
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = p_ == 1.0 ? a_ : a_ * p_ * std::pow(std::abs(m[i]), p_ - 1.0);
    }
    return d;
}

SpMat CostOperator::jacobian(const ScalarField& m) const {
    const auto n = static_cast<Eigen::Index>(grid().size());
    SpMat j(n, n);
    Triplets t;
    if (kind_ == CostKind::nonlocal_affine) {
        const double hv = grid().cell_volume();
        for (Eigen::Index c = 0; c < n; ++c) {
            const double v = c1_ * weight_[static_cast<std::size_t>(c)] * hv;
            if (v == 0.0) continue;
            for (Eigen::Index r = 0; r < n; ++r) t.emplace_back(r, c, v);
        }
    } else {
        const ScalarField d = local_derivative(m);
        for (Eigen::Index i = 0; i < n; ++i) {
            if (d[static_cast<std::size_t>(i)] != 0.0) t.emplace_back(i, i, d[static_cast<std::size_t>(i)]);
        }
    }
    j.setFromTriplets(t.begin(), t.end());
    return j;
}

PotentialOperator PotentialOperator::from_cost(const CostOperator& cost) {
    if (!cost.is_local()) throw std::invalid_argument("a pointwise potential exists only for local costs");
    return PotentialOperator(cost);
}

double PotentialOperator::at(std::size_t node, double m) const {
    const double a = cost_.a();
    const double p = cost_.p();
    const double lin = cost_.offset()[node] * m;
    if (a == 0.0) return lin;
    return a * std::pow(std::abs(m), p + 1.0) / (p + 1.0) + lin;
}

double PotentialOperator::integral(const ScalarField& m) const {
    require_same_grid(m.grid(), cost_.grid(), "potential");
    double s = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) s += at(i, m[i]);
    return s * m.grid().cell_volume();
}

bool PotentialOperator::strictly_convex() const { return cost_.a() > 0.0; }

}  // namespace mfgstop
