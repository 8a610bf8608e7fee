#include "llic/blocks.hpp"

#include <cmath>

#include "llic/ops.hpp"

namespace llic {

namespace {
thread_local bool g_hold_condition = false;
}

HoldConditionGuard::HoldConditionGuard() : previous_(g_hold_condition) { g_hold_condition = true; }
HoldConditionGuard::~HoldConditionGuard() { g_hold_condition = previous_; }
bool condition_held() { return g_hold_condition; }

void BlockConfig::validate() const {
  if (channels == 0) throw ShapeError("block config: channels must be positive");
  if (kernel % 2 == 0) throw ShapeError("block config: kernel size must be odd, got " + std::to_string(kernel));
  if (gate_expansion == 0 || (gate_expansion * channels) % 2 != 0) {
    throw ShapeError("block config: gate hidden width must be even");
  }
  if (condition_pool == 0) throw ShapeError("block config: condition pool must be positive");
}

Conv::Conv(ParamSet& params, const std::string& name, const ConvSpec& spec, Rng& rng, double init_gain)
    : spec_(spec) {
  spec.validate();
  const double fan_in = static_cast<double>(spec.in_channels / spec.groups * spec.kernel * spec.kernel);
  const double bound = init_gain / std::sqrt(fan_in);
  weight_ = params.add_uniform(name + ".weight", spec.weight_shape(), bound, rng);
  if (spec.bias) bias_ = params.add_uniform(name + ".bias", {spec.out_channels}, bound, rng);
}

LayerNorm::LayerNorm(ParamSet& params, const std::string& name, std::size_t channels) {
  gamma_ = params.add(name + ".gamma", {channels}, 1.0);
  beta_ = params.add(name + ".beta", {channels}, 0.0);
}

DepthRB::DepthRB(ParamSet& params, const std::string& name, std::size_t channels, Rng& rng)
    : expand_(params, name + ".expand", ConvSpec::same(channels, channels, 1), rng),
      spatial_(params, name + ".spatial", ConvSpec::depthwise(channels, 3), rng),
      project_(params, name + ".project", ConvSpec::same(channels, channels, 1), rng) {}

Tensor DepthRB::forward(const Tensor& x) const {
  Tensor t = leaky_relu(expand_(x));
  t = leaky_relu(spatial_(t));
  return add(project_(t), x);
}

GateBlock::GateBlock(ParamSet& params, const std::string& name, std::size_t channels, std::size_t expansion,
                     Rng& rng)
    : expand_(params, name + ".expand", ConvSpec::same(channels, channels * expansion, 1), rng),
      project_(params, name + ".project", ConvSpec::same(channels * expansion / 2, channels, 1), rng) {}

Tensor GateBlock::forward(const Tensor& x) const {
  auto [first, second] = channel_split(expand_(x));
  Tensor act = mul(first, second);
  MacsRecorder::note("hadamard", act.numel(), act.shape());
  return add(project_(act), x);
}

FfnBlock::FfnBlock(ParamSet& params, const std::string& name, std::size_t channels, std::size_t expansion, Rng& rng)
    : expand_(params, name + ".expand", ConvSpec::same(channels, channels * expansion, 1), rng),
      project_(params, name + ".project", ConvSpec::same(channels * expansion, channels, 1), rng) {}

Tensor FfnBlock::forward(const Tensor& x) const { return add(project_(gelu_tanh(expand_(x))), x); }

ConditionBranch::ConditionBranch(ParamSet& params, const std::string& name, std::size_t channels,
                                 std::size_t hidden, std::size_t outputs, std::size_t pool, Rng& rng,
                                 double output_gain)
    : pool_(pool),
      summarize_(params, name + ".summarize", ConvSpec{channels, hidden, pool, 1, 0, 1, true}, rng),
      reduce_(params, name + ".reduce", ConvSpec::same(hidden, outputs, 1), rng, output_gain) {}

Tensor ConditionBranch::forward(const Tensor& x) const {
  if (x.dim(2) < pool_ || x.dim(3) < pool_) {
    throw ShapeError("condition branch: input " + shape_str(x.shape()) + " smaller than " + std::to_string(pool_) +
                     "x" + std::to_string(pool_));
  }
  return reduce_(summarize_(adaptive_avg_pool(x, pool_, pool_)));
}

Scst::Scst(ParamSet& params, const std::string& name, const BlockConfig& cfg, Rng& rng)
    : channels_(cfg.channels), kernel_(cfg.kernel), static_(cfg.switches.static_weights) {
  cfg.validate();
  const std::size_t taps = cfg.kernel * cfg.kernel;
  if (static_) {
    const double bound = 1.0 / static_cast<double>(cfg.kernel);
    static_kernel_ = params.add_uniform(name + ".kernel", {cfg.channels, 1, cfg.kernel, cfg.kernel}, bound, rng);
  } else {
    // Generated kernels have K^2 taps; scale their init so a filter's gain stays O(1).
    condition_ = ConditionBranch(params, name + ".condition", cfg.channels, cfg.hidden(), cfg.channels * taps,
                                 cfg.condition_pool, rng, 1.0 / static_cast<double>(cfg.kernel));
  }
  main_ = Conv(params, name + ".main", ConvSpec::same(cfg.channels, cfg.channels, 1), rng);
}

Tensor Scst::kernels(const Tensor& x) const {
  const std::size_t n = x.dim(0);
  if (static_) {
    return repeat_batch(reshape(static_kernel_, {1, channels_, kernel_, kernel_}), n);
  }
  return reshape(condition_.forward(x), {n, channels_, kernel_, kernel_});
}

Tensor Scst::forward(const Tensor& x) const {
  if (x.dim(2) < 3 || x.dim(3) < 3) throw ShapeError("scst: input smaller than 3x3: " + shape_str(x.shape()));
  Tensor projected = main_(x);
  if (static_) {
    return conv2d(projected, ConvSpec{channels_, channels_, kernel_, 1, kernel_ / 2, channels_, false},
                  static_kernel_);
  }
  Tensor k = kernels(x);
  if (g_hold_condition) k = k.detach();
  return conv2d_dynamic_depthwise(projected, k);
}

Scct::Scct(ParamSet& params, const std::string& name, const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  condition_ = ConditionBranch(params, name + ".condition", cfg.channels, cfg.hidden(), cfg.channels,
                               cfg.condition_pool, rng, 1.0);
  main_ = Conv(params, name + ".main", ConvSpec::same(cfg.channels, cfg.channels, 1), rng);
}

Tensor Scct::factors(const Tensor& x) const { return condition_.forward(x); }

Tensor Scct::forward(const Tensor& x) const {
  if (x.dim(2) < 3 || x.dim(3) < 3) throw ShapeError("scct: input smaller than 3x3: " + shape_str(x.shape()));
  Tensor f = factors(x);
  if (g_hold_condition) f = f.detach();
  return channel_scale(main_(x), f);
}

TransformBlock::TransformBlock(ParamSet& params, const std::string& name, TransformKind kind,
                               const BlockConfig& cfg, Rng& rng)
    : kind_(kind) {
  cfg.validate();
  const std::size_t c = cfg.channels;
  norm_in_ = LayerNorm(params, name + ".norm_in", c);
  if (cfg.switches.linear_embedding) {
    embed_linear_.emplace(params, name + ".embed", ConvSpec::same(c, c, 1), rng);
  } else {
    embed_rb_.emplace(params, name + ".embed", c, rng);
  }
  if (kind == TransformKind::spatial) {
    scst_.emplace(params, name + ".scst", cfg, rng);
  } else {
    scct_.emplace(params, name + ".scct", cfg, rng);
  }
  out_proj_ = Conv(params, name + ".out_proj", ConvSpec::same(c, c, 1), rng);
  norm_mid_ = LayerNorm(params, name + ".norm_mid", c);
  if (cfg.switches.use_ffn_instead_of_gate) {
    ffn_.emplace(params, name + ".ffn", c, cfg.gate_expansion, rng);
  } else {
    gate_.emplace(params, name + ".gate", c, cfg.gate_expansion, rng);
  }
}

Tensor TransformBlock::forward(const Tensor& x) const {
  Tensor u = norm_in_(x);
  u = embed_rb_ ? embed_rb_->forward(u) : (*embed_linear_)(u);
  Tensor t = scst_ ? scst_->forward(u) : scct_->forward(u);
  Tensor v = add(out_proj_(t), x);
  Tensor m = norm_mid_(v);
  m = gate_ ? gate_->forward(m) : ffn_->forward(m);
  return add(m, v);
}

std::vector<TransformKind> block_order(const BlockConfig& cfg, Direction dir) {
  std::vector<TransformKind> kinds;
  switch (cfg.layout) {
    case PairLayout::spatial_channel: kinds = {TransformKind::spatial, TransformKind::channel}; break;
    case PairLayout::spatial_spatial: kinds = {TransformKind::spatial, TransformKind::spatial}; break;
    case PairLayout::channel_channel: kinds = {TransformKind::channel, TransformKind::channel}; break;
  }
  if (cfg.switches.swap_stb_ctb) std::swap(kinds[0], kinds[1]);
  if (dir == Direction::inverse) std::swap(kinds[0], kinds[1]);
  std::erase_if(kinds, [&](TransformKind k) {
    return (k == TransformKind::spatial && cfg.switches.disable_stb) ||
           (k == TransformKind::channel && cfg.switches.disable_ctb);
  });
  return kinds;
}

BasicBlock::BasicBlock(ParamSet& params, const std::string& name, const BlockConfig& cfg, Direction dir, Rng& rng) {
  cfg.validate();
  std::size_t index = 0;
  for (TransformKind k : block_order(cfg, dir)) {
    const std::string label = (k == TransformKind::spatial ? ".stb" : ".ctb") + std::to_string(index++);
    blocks_.emplace_back(params, name + label, k, cfg, rng);
  }
}

Tensor BasicBlock::forward(const Tensor& x) const {
  Tensor t = x;
  for (const auto& b : blocks_) t = b.forward(t);
  return t;
}

std::vector<TransformKind> BasicBlock::order() const {
  std::vector<TransformKind> out;
  for (const auto& b : blocks_) out.push_back(b.kind());
  return out;
}

DownsampleBlock::DownsampleBlock(ParamSet& params, const std::string& name, std::size_t cin, std::size_t cout,
                                 Rng& rng)
    : conv_(params, name + ".conv", ConvSpec::down(cin, cout, 5), rng), rb_(params, name + ".rb", cout, rng) {}

Tensor DownsampleBlock::forward(const Tensor& x) const {
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw ShapeError("downsample: odd spatial extents " + shape_str(x.shape()));
  }
  return rb_.forward(conv_(x));
}

UpsampleBlock::UpsampleBlock(ParamSet& params, const std::string& name, std::size_t cin, std::size_t cout, Rng& rng)
    : conv_(params, name + ".conv", ConvSpec::same(cin, cout * 4, 3), rng), rb_(params, name + ".rb", cout, rng) {}

Tensor UpsampleBlock::forward(const Tensor& x) const { return rb_.forward(pixel_shuffle(conv_(x), 2)); }

std::uint64_t gate_macs_per_pixel(std::uint64_t c) { return 3 * c * c + c; }
std::uint64_t ffn_macs_per_pixel(std::uint64_t c) { return 4 * c * c + 2 * c; }

}  // namespace llic
