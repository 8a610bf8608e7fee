#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "llic/tensor.hpp"

namespace llic {

enum class ElementwiseKind { add, sub, mul, div, scale, neg, exp, log, tanh, sqrt, abs, clamp };

/// Lower bound applied to log/div/sqrt operands when domain clamping is on.
inline constexpr double kDomainFloor = 1e-9;

/// Generic elementwise entry point. `b` must either match `a` in shape or hold
/// a single element. For unary kinds `b` is ignored; for `scale` it is the
/// factor; for `clamp` it is the lower bound.
///
/// With `clamp_domain` false, log/sqrt of a non-positive operand and division
/// by zero throw DomainError instead of clamping at kDomainFloor.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b, bool clamp_domain = true);
Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b, bool clamp_domain = true);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b, bool clamp_domain = true);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a, bool clamp_domain = true);
Tensor tanh(const Tensor& a);
Tensor sqrt(const Tensor& a, bool clamp_domain = true);
Tensor abs(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi = std::numeric_limits<double>::infinity());
Tensor square(const Tensor& a);
/// x^p for x >= 0 (negative inputs are treated as 0); gradient is 0 at x == 0.
Tensor pow_nonneg(const Tensor& a, double p);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }

enum class ReduceKind { sum, mean };

/// Reduces over `axes` (empty = all axes). Reduced axes are dropped; a full
/// reduction yields shape (1). Summation order is fixed (row-major).
Tensor reduce(ReduceKind kind, const Tensor& a, std::vector<std::size_t> axes = {});
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Same data, new shape (element count must match).
Tensor reshape(const Tensor& a, Shape shape);

/// Same values, gradient passes through unchanged. Records a node so that
/// callers can substitute the forward values (straight-through estimators).
Tensor with_values(const Tensor& a, std::vector<double> values);

/// Sum of a ⊙ b as a scalar; used for projections in checks.
Tensor dot(const Tensor& a, const Tensor& b);

}  // namespace llic
