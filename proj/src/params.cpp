#include "llic/params.hpp"

#include <algorithm>

namespace llic {

Rng Rng::stream(std::uint64_t seed, std::uint64_t counter) {
  // splitmix64 finalizer decorrelates neighbouring counters.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (counter + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return Rng(z ^ (z >> 31));
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  // Rejection sampling keeps the draw unbiased and portable.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return v % n;
}

Tensor ParamSet::add(const std::string& name, Shape shape, double fill) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor t(std::move(shape), fill);
  t.set_requires_grad(true);
  params_.push_back({name, t});
  return t;
}

Tensor ParamSet::add_uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
  Tensor t = add(name, std::move(shape), 0.0);
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

const Param* ParamSet::find(const std::string& name) const {
  auto it = std::find_if(params_.begin(), params_.end(), [&](const Param& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void ParamSet::fill(double value) {
  for (auto& p : params_) std::fill(p.value.data().begin(), p.value.data().end(), value);
}

}  // namespace llic
