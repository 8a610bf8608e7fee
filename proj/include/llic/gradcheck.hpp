#pragma once

#include <functional>

#include "llic/tensor.hpp"

namespace llic {

using TensorFn = std::function<Tensor(const Tensor&)>;

/// Compares reverse-mode gradients of `fn` at `input` against central
/// differences with step `epsilon`.
///
/// Non-scalar outputs are projected onto a fixed pseudo-random direction, so
/// every output element contributes. Returns
///   max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8).
///
/// Throws DomainError for epsilon outside (0, 1e-2] and NumericError when two
/// evaluations at the same point disagree bitwise.
double grad_check(const TensorFn& fn, const Tensor& input, double epsilon = 1e-5);

}  // namespace llic
