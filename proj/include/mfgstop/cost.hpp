#pragma once

#include <optional>
#include <string>

#include "mfgstop/grid.hpp"
#include "mfgstop/linalg.hpp"

namespace mfgstop {

enum class CostKind { local_power, nonlocal_affine, local_affine_shifted };

/// strict_monotone: <f(m1) - f(m2), m1 - m2> > 0 for m1 != m2.
/// anti_monotone: m1 <= m2 nodewise implies f(m1) >= f(m2) nodewise.
enum class Monotonicity { strict_monotone, anti_monotone, neither };

std::string to_string(CostKind kind);
std::string to_string(Monotonicity tag);

/// The running cost m -> f(x, m).
///
///   local_power:          a |m|^(p-1) m + f0(x)          (a m^p + f0 for m >= 0)
///   nonlocal_affine:      c0(x) + c1 <w, m>
///   local_affine_shifted: base(x) + m - m_ref(x)
class CostOperator {
public:
    static CostOperator local_power(double a, double p, ScalarField f0);
    static CostOperator nonlocal_affine(ScalarField c0, double c1, ScalarField weight);
    static CostOperator local_affine_shifted(ScalarField base, ScalarField m_ref);
    /// f(x, m) = value(x), independent of m.
    static CostOperator constant(ScalarField value);

    CostKind kind() const { return kind_; }
    Monotonicity monotonicity() const { return monotonicity_; }
    const Grid& grid() const { return offset_.grid(); }
    bool is_local() const { return kind_ != CostKind::nonlocal_affine; }

    ScalarField operator()(const ScalarField& m) const;
    /// Nodal derivative df_i/dm_i of local costs (zero for nonlocal).
    ScalarField local_derivative(const ScalarField& m) const;
    /// Full Jacobian df/dm as a sparse matrix (dense rows for nonlocal costs).
    SpMat jacobian(const ScalarField& m) const;

    double a() const { return a_; }
    double p() const { return p_; }
    double c1() const { return c1_; }
    /// f0, c0 or base - m_ref depending on the kind.
    const ScalarField& offset() const { return offset_; }
    const ScalarField& weight() const { return weight_; }

private:
    CostOperator(CostKind kind, ScalarField offset, ScalarField weight);

    CostKind kind_;
    Monotonicity monotonicity_ = Monotonicity::neither;
    double a_ = 0.0;
    double p_ = 1.0;
    double c1_ = 0.0;
    ScalarField offset_;
    ScalarField weight_;
};

/// Antiderivative F(x, m) with dF/dm = f(x, m), available for local costs.
class PotentialOperator {
public:
    static PotentialOperator from_cost(const CostOperator& cost);

    const CostOperator& cost() const { return cost_; }
    double at(std::size_t node, double m) const;
    /// Sum of F(x_i, m_i) h^d.
    double integral(const ScalarField& m) const;
    /// True when F is strictly convex in m at every node.
    bool strictly_convex() const;

private:
    explicit PotentialOperator(CostOperator cost) : cost_(std::move(cost)) {}
    CostOperator cost_;
};

}  // namespace mfgstop
