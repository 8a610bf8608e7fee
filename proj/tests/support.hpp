#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "llic/ops.hpp"
#include "llic/params.hpp"
#include "llic/tensor.hpp"

namespace llic::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Copy of the values; safe to iterate when `t` is a temporary.
inline std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

/// Overwrites every parameter with draws from U(-bound, bound).
inline void randomize(ParamSet& ps, std::uint64_t seed, double bound = 0.5) {
  Rng rng(seed);
  for (auto& p : ps.params()) {
    for (double& v : p.value.data()) v = rng.uniform(-bound, bound);
  }
}

/// Central-difference check of d(r . fn()) / d param for a parameter tensor
/// that fn() reads internally. Same error measure as grad_check.
template <typename Fn>
double param_grad_check(Tensor param, Fn fn, double eps = 1e-5) {
  Tape::current().reset();
  param.zero_grad();
  const Tensor out0 = fn();
  Rng rng(0xd1ffu);
  Tensor r(out0.shape());
  for (double& v : r.data()) v = rng.uniform(-1.0, 1.0);
  backward(dot(out0, r));
  const std::vector<double> analytic(param.grad().begin(), param.grad().end());
  param.zero_grad();
  NoGradGuard no_grad;
  auto project = [&] {
    const Tensor o = fn();
    double acc = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) acc += o[i] * r[i];
    return acc;
  };
  double worst = 0.0;
  auto values = param.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + eps;
    const double plus = project();
    values[i] = orig - eps;
    const double minus = project();
    values[i] = orig;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

inline Tensor param(const ParamSet& ps, const std::string& name) {
  const Param* p = ps.find(name);
  if (!p) throw std::out_of_range("no parameter " + name);
  return p->value;
}

}  // namespace llic::test
