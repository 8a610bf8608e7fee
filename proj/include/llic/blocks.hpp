#pragma once

#include <memory>
#include <optional>
#include <string>

#include "llic/nn.hpp"
#include "llic/params.hpp"

namespace llic {

/// Ablation switches shared by every transform block of a model.
struct BlockSwitches {
  bool static_weights = false;           // SCST kernels are a learned Param, no condition branch
  bool use_ffn_instead_of_gate = false;  // GELU feed-forward instead of the gate block
  bool linear_embedding = false;         // single 1x1 conv instead of DepthRB
  bool disable_stb = false;
  bool disable_ctb = false;
  bool swap_stb_ctb = false;  // exchange the STB/CTB order inside a basic block

  bool operator==(const BlockSwitches&) const = default;
};

/// Which transform blocks make up one basic block (ablation rows "STB + STB",
/// "CTB + CTB"); the default pairs a spatial with a channel block.
enum class PairLayout { spatial_channel, spatial_spatial, channel_channel };

struct BlockConfig {
  std::size_t channels = 0;
  std::size_t kernel = 11;
  std::size_t gate_expansion = 2;
  std::size_t condition_pool = 3;
  std::size_t condition_hidden = 0;  // 0 means "same as channels"
  BlockSwitches switches;
  PairLayout layout = PairLayout::spatial_channel;

  std::size_t hidden() const { return condition_hidden == 0 ? channels : condition_hidden; }
  void validate() const;
};

/// A convolution together with its parameters.
class Conv {
 public:
  Conv() = default;
  /// Weights and bias ~ U(-b, b), b = init_gain / sqrt(fan_in).
  Conv(ParamSet& params, const std::string& name, const ConvSpec& spec, Rng& rng, double init_gain = 1.0);

  Tensor operator()(const Tensor& x) const { return conv2d(x, spec_, weight_, bias_); }
  const ConvSpec& spec() const { return spec_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  ConvSpec spec_;
  Tensor weight_;
  Tensor bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamSet& params, const std::string& name, std::size_t channels);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Tensor gamma_;
  Tensor beta_;
};

/// 1x1 -> act -> depthwise 3x3 -> act -> 1x1, plus the input.
class DepthRB {
 public:
  DepthRB() = default;
  DepthRB(ParamSet& params, const std::string& name, std::size_t channels, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Conv expand_, spatial_, project_;
};

/// 1x1 to expansion*c, split in halves, Hadamard product, 1x1 back to c, plus the input.
class GateBlock {
 public:
  GateBlock() = default;
  GateBlock(ParamSet& params, const std::string& name, std::size_t channels, std::size_t expansion, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Conv expand_, project_;
};

/// 1x1 to expansion*c, GELU, 1x1 back to c, plus the input.
class FfnBlock {
 public:
  FfnBlock() = default;
  FfnBlock(ParamSet& params, const std::string& name, std::size_t channels, std::size_t expansion, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Conv expand_, project_;
};

/// Pooled 3x3 summary -> dense 3x3 valid conv -> 1x1. Emits one vector per sample.
class ConditionBranch {
 public:
  ConditionBranch() = default;
  ConditionBranch(ParamSet& params, const std::string& name, std::size_t channels, std::size_t hidden,
                  std::size_t outputs, std::size_t pool, Rng& rng, double output_gain);
  /// (n, c, h, w) -> (n, outputs, 1, 1)
  Tensor forward(const Tensor& x) const;
  const Conv& output_conv() const { return reduce_; }

 private:
  std::size_t pool_ = 3;
  Conv summarize_, reduce_;
};

/// While alive, generated SCST kernels and SCCT factors on this thread are
/// cut from the graph, so gradients only follow the spatial data path.
class HoldConditionGuard {
 public:
  HoldConditionGuard();
  ~HoldConditionGuard();
  HoldConditionGuard(const HoldConditionGuard&) = delete;
  HoldConditionGuard& operator=(const HoldConditionGuard&) = delete;

 private:
  bool previous_;
};

bool condition_held();

/// Self-conditioned spatial transform: a per-sample K x K depthwise filter
/// generated from the input, applied to a 1x1 projection of the input.
class Scst {
 public:
  Scst() = default;
  Scst(ParamSet& params, const std::string& name, const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x) const;
  /// The (n, c, K, K) kernels that forward() would use for x.
  Tensor kernels(const Tensor& x) const;

 private:
  std::size_t channels_ = 0;
  std::size_t kernel_ = 0;
  bool static_ = false;
  ConditionBranch condition_;
  Tensor static_kernel_;  // (c, 1, K, K) in static mode
  Conv main_;
};

/// Self-conditioned channel transform: per-sample channel factors times a 1x1 projection.
class Scct {
 public:
  Scct() = default;
  Scct(ParamSet& params, const std::string& name, const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x) const;
  Tensor factors(const Tensor& x) const;

 private:
  ConditionBranch condition_;
  Conv main_;
};

enum class TransformKind { spatial, channel };

/// STB / CTB:
///   u = Embed(Norm(x)); v = Conv1x1(Transform(u)) + x; out = Mix(Norm(v)) + v
/// with Embed = DepthRB (or 1x1 conv), Transform = SCST or SCCT, Mix = Gate (or FFN).
class TransformBlock {
 public:
  TransformBlock() = default;
  TransformBlock(ParamSet& params, const std::string& name, TransformKind kind, const BlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x) const;
  TransformKind kind() const { return kind_; }

 private:
  TransformKind kind_ = TransformKind::spatial;
  LayerNorm norm_in_, norm_mid_;
  std::optional<DepthRB> embed_rb_;
  std::optional<Conv> embed_linear_;
  std::optional<Scst> scst_;
  std::optional<Scct> scct_;
  Conv out_proj_;
  std::optional<GateBlock> gate_;
  std::optional<FfnBlock> ffn_;
};

enum class Direction { forward, inverse };

/// Transform blocks a basic block runs, in execution order, after applying
/// the layout, swap and disable switches.
std::vector<TransformKind> block_order(const BlockConfig& cfg, Direction dir);

/// Two transform blocks. Forward order is STB then CTB; the inverse block
/// used by the synthesis transform runs CTB then STB.
class BasicBlock {
 public:
  BasicBlock() = default;
  BasicBlock(ParamSet& params, const std::string& name, const BlockConfig& cfg, Direction dir, Rng& rng);
  Tensor forward(const Tensor& x) const;
  /// Execution order of the transform blocks that are enabled.
  std::vector<TransformKind> order() const;

 private:
  std::vector<TransformBlock> blocks_;
};

/// Stride-2 5x5 conv then DepthRB.
class DownsampleBlock {
 public:
  DownsampleBlock() = default;
  DownsampleBlock(ParamSet& params, const std::string& name, std::size_t cin, std::size_t cout, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Conv conv_;
  DepthRB rb_;
};

/// 3x3 conv to 4*cout, pixel shuffle x2, then DepthRB.
class UpsampleBlock {
 public:
  UpsampleBlock() = default;
  UpsampleBlock(ParamSet& params, const std::string& name, std::size_t cin, std::size_t cout, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  Conv conv_;
  DepthRB rb_;
};

/// Per-pixel multiply-accumulate cost of the channel mixers (c = channels).
std::uint64_t gate_macs_per_pixel(std::uint64_t c);
std::uint64_t ffn_macs_per_pixel(std::uint64_t c);

}  // namespace llic
