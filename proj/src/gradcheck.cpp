#include "llic/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "llic/ops.hpp"

namespace llic {

namespace {

std::vector<double> projection(std::size_t n) {
  std::mt19937_64 gen(0x5eed'9a1dULL);
  std::vector<double> r(n);
  for (double& v : r) v = static_cast<double>(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  return r;
}

std::vector<double> evaluate(const TensorFn& fn, const Tensor& x, std::size_t expected) {
  Tensor out = fn(x);
  if (out.numel() != expected) throw NumericError("grad_check: output size changed between evaluations");
  return {out.data().begin(), out.data().end()};
}

}  // namespace

double grad_check(const TensorFn& fn, const Tensor& input, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw DomainError("grad_check: epsilon must lie in (0, 1e-2]");

  std::vector<double> r;
  std::vector<double> analytic;
  {
    Tensor x = input.clone();
    x.set_requires_grad(true);
    Tape::current().reset();
    Tensor out = fn(x);
    r = projection(out.numel());
    Tensor loss = dot(out, Tensor(out.shape(), r));
    backward(loss);
    auto g = x.grad();
    analytic.assign(g.begin(), g.end());
  }

  NoGradGuard no_grad;
  Tensor probe = input.clone();
  const auto base1 = evaluate(fn, probe, r.size());
  const auto base2 = evaluate(fn, probe, r.size());
  if (std::memcmp(base1.data(), base2.data(), base1.size() * sizeof(double)) != 0) {
    throw NumericError("grad_check: forward function is not deterministic");
  }

  double worst = 0.0;
  auto values = probe.data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + epsilon;
    const auto plus = evaluate(fn, probe, r.size());
    values[i] = orig - epsilon;
    const auto minus = evaluate(fn, probe, r.size());
    values[i] = orig;
    // Differencing per output before projecting keeps the rounding error
    // relative to each output rather than to the whole projected sum.
    double numeric = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) numeric += r[j] * ((plus[j] - minus[j]) / (2.0 * epsilon));
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace llic
