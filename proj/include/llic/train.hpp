#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "llic/checkpoint.hpp"
#include "llic/model.hpp"

namespace llic {

inline constexpr std::array<double, 6> kMseLambdas{0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483};
inline constexpr std::array<double, 6> kMsssimLambdas{2.4, 4.58, 8.73, 16.64, 31.73, 60.5};

enum class DistortionKind { mse, ms_ssim };

struct TrainConfig {
  double lambda = 0.0130;
  DistortionKind distortion = DistortionKind::mse;
  std::size_t total_steps = 2'000'000;
  std::size_t batch_size = 16;
  // Learning rate is lr_values[i] from milestone i (fractions of total_steps).
  std::array<double, 5> lr_values{1e-4, 3e-5, 1e-5, 3e-6, 1e-6};
  std::array<double, 4> milestone_fractions{0.85, 0.90, 0.95, 0.975};
  bool lr_decay = true;  // false keeps lr_values[0] throughout
  std::size_t patch_small = 256;
  std::size_t patch_large = 512;
  double curriculum_fraction = 0.6;  // switch to patch_large after this share of the steps
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

double lr_schedule(std::size_t step, const TrainConfig& cfg);
std::size_t patch_size_at(std::size_t step, const TrainConfig& cfg);

/// Uniform random size x size crop of a (3, h, w) image; smaller images are
/// replicate-padded first. Returns (3, size, size).
Tensor sample_patch(const Tensor& image, std::size_t size, Rng& rng);

struct RdLoss {
  Tensor loss;        // R + lambda * D
  Tensor rate;        // bits per pixel
  Tensor distortion;  // 255^2 * MSE, or 1 - MS-SSIM
};

RdLoss rd_loss(const Tensor& x, const ForwardResult& fwd, double lambda, DistortionKind kind = DistortionKind::mse);

/// Bias-corrected Adam over a ParamSet. Gradients are zeroed after each step.
class Adam {
 public:
  Adam(ParamSet& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(double lr);
  std::size_t steps() const { return t_; }

  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::size_t t, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  ParamSet* params_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct StepStats {
  std::size_t step;  // index of the completed step (0-based)
  double loss, rate, distortion, lr;
};

/// Owns the optimization loop. Each step draws its batch and noise from an
/// RNG stream keyed by (seed, step), so a resumed run replays exactly.
class Trainer {
 public:
  Trainer(CompressionModel& model, TrainConfig cfg, std::vector<Tensor> images);

  StepStats step();
  /// Runs until `steps_done() == until`, calling `on_step` after each step.
  void run(std::size_t until, const std::function<void(const StepStats&)>& on_step = {});
  std::size_t steps_done() const { return step_; }

  /// Model parameters plus optimizer state.
  Checkpoint checkpoint() const;
  /// Loads parameters and optimizer state saved by checkpoint().
  void restore(const Checkpoint& ckpt);

 private:
  Tensor make_batch(std::size_t patch, Rng& rng) const;

  CompressionModel* model_;
  TrainConfig cfg_;
  std::vector<Tensor> images_;
  Adam adam_;
  std::size_t step_ = 0;
};

}  // namespace llic
