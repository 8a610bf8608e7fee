#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "llic/blocks.hpp"

namespace llic {

inline constexpr double kSigmaMin = 0.11;
inline constexpr double kSigmaMax = 256.0;
inline constexpr double kLikelihoodFloor = 1e-9;

struct ModelConfig {
  std::size_t N = 192;  // transform width
  std::size_t M = 320;  // latent channels
  std::size_t hyper = 192;
  std::array<std::size_t, 4> analysis_kernels{11, 11, 9, 9};
  std::array<std::size_t, 4> synthesis_kernels{9, 9, 11, 11};
  std::size_t blocks_per_stage = 1;
  std::size_t gate_expansion = 2;
  std::size_t condition_hidden = 0;  // 0: same as block width
  BlockSwitches switches;
  PairLayout layout = PairLayout::spatial_channel;

  static ModelConfig full_scale() { return {}; }
  /// N=32, M=48 with the same topology.
  static ModelConfig desk_scale();

  void validate() const;
  /// Stable textual form of every architectural field.
  std::string canonical() const;
  /// FNV-1a 64 of canonical().
  std::uint64_t digest() const;

  BlockConfig block(std::size_t channels, std::size_t kernel) const;
};

struct GaussianParams {
  Tensor mu;
  Tensor sigma;  // >= kSigmaMin
};

enum class QuantMode { noise, round, ste };
enum class ForwardMode { train, eval };

/// noise: y + U(-1/2, 1/2); round: round(y - mu) + mu; ste: round forward,
/// identity gradient to y. `mu` may be undefined (treated as zero).
Tensor quantize(const Tensor& y, const Tensor& mu, QuantMode mode, Rng* rng = nullptr);

/// P(residual) under N(0, sigma) integrated over [r - 1/2, r + 1/2], floored at 1e-9.
Tensor gaussian_likelihood(const Tensor& residual, const Tensor& sigma);

/// Standard normal CDF, evaluated in the numerically safer tail form.
double normal_cdf(double x);
/// Scalar form of gaussian_likelihood without the floor.
double gaussian_mass(double residual, double sigma);

/// sum(-log2 p)
Tensor bits_from_likelihood(const Tensor& pmf);

/// Per-channel Gaussian prior for the hyper-latent.
class FactorizedPrior {
 public:
  FactorizedPrior() = default;
  FactorizedPrior(ParamSet& params, const std::string& name, std::size_t channels);

  const Tensor& loc() const { return loc_; }
  const Tensor& log_scale() const { return log_scale_; }
  /// exp(log_scale) clamped to [kSigmaMin, kSigmaMax].
  double scale(std::size_t channel) const;

 private:
  Tensor loc_;
  Tensor log_scale_;
};

/// Likelihood of z (n, C, h, w) under the prior, floored at 1e-9.
Tensor factorized_likelihood(const Tensor& z, const FactorizedPrior& prior);

struct ForwardResult {
  Tensor x_hat;
  Tensor bits_y;  // scalar
  Tensor bits_z;  // scalar
  Tensor y;
  Tensor y_q;  // noisy (train) or rounded (eval) latent used for the rate
  Tensor z;
  Tensor z_q;
  GaussianParams gauss;
};

/// Analysis/synthesis transforms, hyperprior, and likelihood models.
class CompressionModel {
 public:
  explicit CompressionModel(const ModelConfig& config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  const FactorizedPrior& prior() const { return prior_; }

  /// (n, 3, h, w), h and w multiples of 16 -> (n, M, h/16, w/16)
  Tensor analysis(const Tensor& x) const;
  Tensor synthesis(const Tensor& y_hat) const;
  Tensor hyper_analysis(const Tensor& y) const;
  /// Mean and scale for a latent of spatial size (lat_h, lat_w).
  GaussianParams hyper_synthesis(const Tensor& z_hat, std::size_t lat_h, std::size_t lat_w) const;

  /// Train: rate on noisy latents, distortion path through STE.
  /// Eval: rounding everywhere, scales snapped to the coding table, output clamped to [0, 1].
  ForwardResult forward(const Tensor& x, ForwardMode mode, Rng* rng = nullptr) const;

 private:
  ModelConfig config_;
  ParamSet params_;
  std::vector<DownsampleBlock> down_;
  std::vector<std::vector<BasicBlock>> analysis_blocks_;
  std::vector<std::vector<BasicBlock>> synthesis_blocks_;
  std::vector<UpsampleBlock> up_;
  Conv ha1_, ha2_, ha3_;
  Conv hs1_, hs2_, hs3_;
  FactorizedPrior prior_;
};

/// Smallest multiple of 16 that is >= v.
std::size_t padded_extent(std::size_t v);

}  // namespace llic
