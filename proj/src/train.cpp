#include "llic/train.hpp"

#include <algorithm>
#include <cmath>

#include "llic/metrics.hpp"
#include "llic/nn.hpp"
#include "llic/ops.hpp"

namespace llic {

namespace {

Tensor counter_tensor(std::uint64_t v) {
  // Two 32-bit halves keep every value exact in a double.
  return Tensor({2}, {static_cast<double>(v >> 32), static_cast<double>(v & 0xFFFFFFFFu)});
}

std::uint64_t counter_value(const Tensor* t, const char* name) {
  if (!t || t->numel() != 2) throw FormatError(std::string("checkpoint: missing or malformed ") + name);
  for (double v : t->data()) {
    if (!(v >= 0.0 && v <= 4294967295.0 && v == std::floor(v))) {
      throw FormatError(std::string("checkpoint: malformed ") + name);
    }
  }
  return (static_cast<std::uint64_t>((*t)[0]) << 32) | static_cast<std::uint64_t>((*t)[1]);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda > 0.0)) throw DomainError("train config: lambda must be positive");
  if (batch_size == 0) throw DomainError("train config: batch size must be positive");
  if (patch_small == 0 || patch_large == 0 || patch_small % 16 != 0 || patch_large % 16 != 0) {
    throw DomainError("train config: patch sizes must be positive multiples of 16");
  }
  for (std::size_t i = 1; i < milestone_fractions.size(); ++i) {
    if (!(milestone_fractions[i] > milestone_fractions[i - 1])) {
      throw DomainError("train config: milestones must be increasing");
    }
  }
  if (!(milestone_fractions.front() > 0.0)) throw DomainError("train config: milestones must be positive");
  for (double lr : lr_values) {
    if (!(lr > 0.0)) throw DomainError("train config: learning rates must be positive");
  }
  if (!(curriculum_fraction >= 0.0 && curriculum_fraction <= 1.0)) {
    throw DomainError("train config: curriculum fraction must lie in [0, 1]");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_eps > 0.0)) {
    throw DomainError("train config: invalid Adam constants");
  }
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  if (!cfg.lr_decay) return cfg.lr_values[0];
  const double total = static_cast<double>(cfg.total_steps);
  std::size_t phase = 0;
  for (double f : cfg.milestone_fractions) {
    if (static_cast<double>(step) >= std::round(f * total)) ++phase;
  }
  return cfg.lr_values[phase];
}

std::size_t patch_size_at(std::size_t step, const TrainConfig& cfg) {
  const double switch_step = std::round(cfg.curriculum_fraction * static_cast<double>(cfg.total_steps));
  return static_cast<double>(step) < switch_step ? cfg.patch_small : cfg.patch_large;
}

Tensor sample_patch(const Tensor& image, std::size_t size, Rng& rng) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("sample_patch: expected (3, h, w)");
  if (size == 0) throw ShapeError("sample_patch: patch size must be positive");
  NoGradGuard no_grad;
  Tensor src = image;
  if (image.dim(1) < size || image.dim(2) < size) {
    const Tensor padded = pad_replicate(reshape(image, {1, 3, image.dim(1), image.dim(2)}),
                                        std::max(size, image.dim(1)), std::max(size, image.dim(2)));
    src = reshape(padded, {3, padded.dim(2), padded.dim(3)});
  }
  const std::size_t h = src.dim(1), w = src.dim(2);
  const std::size_t oy = rng.below(h - size + 1), ox = rng.below(w - size + 1);
  Tensor out({3, size, size});
  auto o = out.data();
  const auto in = src.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < size; ++y) {
      const double* row = in.data() + (c * h + oy + y) * w + ox;
      std::copy(row, row + size, o.data() + (c * size + y) * size);
    }
  }
  return out;
}

RdLoss rd_loss(const Tensor& x, const ForwardResult& fwd, double lambda, DistortionKind kind) {
  if (x.shape() != fwd.x_hat.shape()) {
    throw ShapeError("rd_loss: x " + shape_str(x.shape()) + " vs x_hat " + shape_str(fwd.x_hat.shape()));
  }
  const double pixels = static_cast<double>(x.dim(0) * x.dim(2) * x.dim(3));
  RdLoss r;
  r.rate = scale(add(fwd.bits_y, fwd.bits_z), 1.0 / pixels);
  if (kind == DistortionKind::mse) {
    r.distortion = scale(mean(square(sub(x, fwd.x_hat))), 255.0 * 255.0);
  } else {
    r.distortion = add_scalar(neg(ms_ssim_tensor(x, fwd.x_hat)), 1.0);
  }
  r.loss = add(r.rate, scale(r.distortion, lambda));
  return r;
}

Adam::Adam(ParamSet& params, double beta1, double beta2, double eps)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params.params()) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void Adam::step(double lr) {
  auto& ps = params_->params();
  for (const auto& p : ps) {
    if (!p.value.has_grad()) throw AutogradError("adam: parameter " + p.name + " has no gradient");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto value = ps[i].value.data();
    const auto grad = ps[i].value.grad();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
    ps[i].value.zero_grad();
  }
}

void Adam::restore(std::size_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw FormatError("adam: moment count mismatch");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i].shape() != m_[i].shape() || v[i].shape() != v_[i].shape()) {
      throw FormatError("adam: moment shape mismatch for " + params_->params()[i].name);
    }
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

Trainer::Trainer(CompressionModel& model, TrainConfig cfg, std::vector<Tensor> images)
    : model_(&model),
      cfg_(cfg),
      images_(std::move(images)),
      adam_(model.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) {
  cfg_.validate();
  if (images_.empty()) throw DomainError("trainer: no training images");
  for (const auto& img : images_) {
    if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("trainer: images must be (3, h, w)");
  }
}

Tensor Trainer::make_batch(std::size_t patch, Rng& rng) const {
  Tensor batch({cfg_.batch_size, 3, patch, patch});
  const std::size_t per = 3 * patch * patch;
  for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
    const Tensor& img = images_[rng.below(images_.size())];
    const Tensor p = sample_patch(img, patch, rng);
    std::copy(p.data().begin(), p.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(b * per));
  }
  return batch;
}

StepStats Trainer::step() {
  Rng rng = Rng::stream(cfg_.seed, step_);
  const Tensor x = make_batch(patch_size_at(step_, cfg_), rng);
  const ForwardResult fwd = model_->forward(x, ForwardMode::train, &rng);
  const RdLoss l = rd_loss(x, fwd, cfg_.lambda, cfg_.distortion);
  if (!std::isfinite(l.loss.item())) throw NumericError("training diverged at step " + std::to_string(step_));
  backward(l.loss);
  const double lr = lr_schedule(step_, cfg_);
  adam_.step(lr);
  return {step_++, l.loss.item(), l.rate.item(), l.distortion.item(), lr};
}

void Trainer::run(std::size_t until, const std::function<void(const StepStats&)>& on_step) {
  while (step_ < until) {
    const StepStats s = step();
    if (on_step) on_step(s);
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt = model_checkpoint(*model_);
  ckpt.put("train.step", counter_tensor(step_));
  ckpt.put("train.seed", counter_tensor(cfg_.seed));
  ckpt.put("train.lambda", Tensor::from({cfg_.lambda}));
  ckpt.put("train.adam_steps", counter_tensor(adam_.steps()));
  const auto& ps = model_->params().params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ckpt.put("adam.m." + ps[i].name, adam_.first_moments()[i].clone());
    ckpt.put("adam.v." + ps[i].name, adam_.second_moments()[i].clone());
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  load_model_params(*model_, ckpt);
  const Tensor* lambda = ckpt.find("train.lambda");
  if (!lambda || lambda->numel() != 1) throw FormatError("checkpoint: no training state");
  if ((*lambda)[0] != cfg_.lambda) throw FormatError("checkpoint: trained with a different lambda");
  const std::uint64_t seed = counter_value(ckpt.find("train.seed"), "train.seed");
  if (seed != cfg_.seed) throw FormatError("checkpoint: trained with a different seed");
  const std::size_t step = counter_value(ckpt.find("train.step"), "train.step");
  const std::size_t adam_steps = counter_value(ckpt.find("train.adam_steps"), "train.adam_steps");
  std::vector<Tensor> m, v;
  for (const auto& p : model_->params().params()) {
    const Tensor* tm = ckpt.find("adam.m." + p.name);
    const Tensor* tv = ckpt.find("adam.v." + p.name);
    if (!tm || !tv) throw FormatError("checkpoint: missing optimizer state for " + p.name);
    m.push_back(tm->clone());
    v.push_back(tv->clone());
  }
  adam_.restore(adam_steps, std::move(m), std::move(v));
  step_ = step;
}

}  // namespace llic
