#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "llic/tensor.hpp"

namespace llic {

/// Seeded generator with platform-independent real-valued draws.
/// (std distributions are implementation-defined; the engine is not.)
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream for (seed, counter), e.g. one per training step.
  static Rng stream(std::uint64_t seed, std::uint64_t counter);

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

struct Param {
  std::string name;
  Tensor value;
};

/// Ordered, uniquely named collection of learned tensors.
class ParamSet {
 public:
  /// Registers a parameter filled with `fill`.
  Tensor add(const std::string& name, Shape shape, double fill);
  /// Registers a parameter drawn uniformly from [-bound, bound].
  Tensor add_uniform(const std::string& name, Shape shape, double bound, Rng& rng);

  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }
  const Param* find(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  void fill(double value);

 private:
  std::vector<Param> params_;
};

}  // namespace llic
