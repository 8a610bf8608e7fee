#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "llic/tensor.hpp"

namespace llic {

/// Static convolution geometry. Weights are (out, in/groups, K, K).
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool bias = true;

  static ConvSpec same(std::size_t cin, std::size_t cout, std::size_t k) {
    return {cin, cout, k, 1, k / 2, 1, true};
  }
  static ConvSpec depthwise(std::size_t c, std::size_t k) { return {c, c, k, 1, k / 2, c, true}; }
  static ConvSpec down(std::size_t cin, std::size_t cout, std::size_t k) {
    return {cin, cout, k, 2, k / 2, 1, true};
  }

  bool is_depthwise() const { return groups == in_channels && groups == out_channels; }
  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel, kernel}; }
  std::size_t output_extent(std::size_t in) const;
  void validate() const;
};

/// Cross-correlation over NCHW input; differentiable in input, weight and bias.
Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weight, const Tensor& bias = {});

/// Depthwise convolution whose kernels are themselves activations: sample i,
/// channel j is filtered with kernels[i, j] (K odd, padding K/2, stride 1).
Tensor conv2d_dynamic_depthwise(const Tensor& input, const Tensor& kernels);

/// Mean over bins [floor(i*h/out), floor((i+1)*h/out)) in each spatial axis.
Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w);

/// Normalizes across channels at every (n, y, x), then applies gamma/beta.
Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu_tanh(const Tensor& input);

enum class ActivationKind { relu, leaky_relu };
inline constexpr double kLeakySlope = 0.01;

Tensor activation(ActivationKind kind, const Tensor& input);
Tensor relu(const Tensor& input);
Tensor leaky_relu(const Tensor& input, double slope = kLeakySlope);
Tensor softplus(const Tensor& input);

/// Depth-to-space: out[n, c, y*r+i, x*r+j] = in[n, c*r*r + i*r + j, y, x].
Tensor pixel_shuffle(const Tensor& input, std::size_t r);
Tensor pixel_unshuffle(const Tensor& input, std::size_t r);

/// First / second half of the channel axis.
std::pair<Tensor, Tensor> channel_split(const Tensor& input);
Tensor channel_concat(const Tensor& a, const Tensor& b);

/// Multiplies every (n, c) plane of `input` by factors[n, c] (factors shaped (n, c, 1, 1)).
Tensor channel_scale(const Tensor& input, const Tensor& factors);

/// Tiles a batch-1 tensor n times along the batch axis.
Tensor repeat_batch(const Tensor& input, std::size_t n);

/// Replicate-pads the bottom/right edges up to (h, w).
Tensor pad_replicate(const Tensor& input, std::size_t h, std::size_t w);
/// Keeps the top-left (h, w) window.
Tensor crop(const Tensor& input, std::size_t h, std::size_t w);

/// Collects multiply-accumulate counts from every op executed while it is
/// installed on the current thread. Used to cross-check the analytic counter.
class MacsRecorder {
 public:
  struct Entry {
    std::string kind;
    std::uint64_t macs;
    Shape output;
  };

  MacsRecorder();
  ~MacsRecorder();
  MacsRecorder(const MacsRecorder&) = delete;
  MacsRecorder& operator=(const MacsRecorder&) = delete;

  const std::vector<Entry>& entries() const { return entries_; }
  std::uint64_t total() const;

  static void note(const char* kind, std::uint64_t macs, const Shape& output);

 private:
  std::vector<Entry> entries_;
  MacsRecorder* previous_;
};

}  // namespace llic
