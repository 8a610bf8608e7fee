#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "llic/model.hpp"

namespace llic {

enum class ErfNormalization {
  average_then_normalize,  // mean of raw maps, normalized once when emitted
  normalize_then_average,  // each map scaled to max 1 before averaging
};

/// How gradients treat the self-conditioned weights (generated SCST kernels
/// and SCCT factors): `propagate` follows them like any activation, `hold`
/// treats them as constants and so measures the spatial data path only.
enum class ConditionGradient { propagate, hold };

struct ErfOptions {
  ErfNormalization normalization = ErfNormalization::average_then_normalize;
  ConditionGradient condition = ConditionGradient::propagate;
};

struct ErfMap {
  std::size_t h = 0, w = 0;
  std::vector<double> values;  // row-major, all >= 0
  std::uint64_t model_digest = 0;
  std::size_t image_count = 0;
  ErfOptions options;

  double at(std::size_t y, std::size_t x) const { return values[y * w + x]; }
  /// Largest Chebyshev distance from (h/2, w/2) of any entry above threshold
  /// (-1 when no entry exceeds it).
  long support_radius(double threshold) const;
};

using AnalysisFn = std::function<Tensor(const Tensor&)>;

/// |d probe / d x| summed over input channels and averaged over images, where
/// probe is the channel sum of fn(x) at its spatial centre. Images are
/// (3, s, s) or (1, 3, s, s).
ErfMap erf_map(const AnalysisFn& fn, const std::vector<Tensor>& images, const ErfOptions& options = {});
/// Uses the model's analysis transform; s must be a multiple of 16.
ErfMap erf_map(const CompressionModel& model, const std::vector<Tensor>& images, const ErfOptions& options = {});

/// Grid as CSV rows (one row per image row).
std::string erf_csv(const ErfMap& map);
/// 8-bit binary PGM, value = 255 * log1p(255 v / max) / log1p(255).
std::vector<std::uint8_t> erf_pgm(const ErfMap& map);

struct MacsRecord {
  std::string path;
  std::uint64_t macs = 0;
  Shape output;
};

struct MacsReport {
  std::size_t height = 0, width = 0;
  std::vector<MacsRecord> layers;

  std::uint64_t total() const;
  /// Sum over layers whose path starts with `prefix` (e.g. "g_a").
  std::uint64_t module_total(const std::string& prefix) const;
  std::string format() const;
};

/// Multiply-accumulates of a static convolution at the given input size (n = 1).
std::uint64_t conv_macs(const ConvSpec& spec, std::size_t h, std::size_t w);
/// Per output pixel: K^2 c for a depthwise K x K conv, c^2 for a dense 1x1 conv.
std::uint64_t depthwise_macs_per_pixel(std::uint64_t c, std::uint64_t k);
std::uint64_t dense1x1_macs_per_pixel(std::uint64_t c);

/// Analytic forward cost of g_a, g_s, h_a and h_s for an h x w image
/// (multiples of 16). Normalization, activations and pooling count 0.
MacsReport count_macs(const ModelConfig& config, std::size_t h, std::size_t w);

}  // namespace llic
