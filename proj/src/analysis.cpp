#include "llic/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <tuple>

#include "llic/ops.hpp"

namespace llic {

namespace {

Tensor as_batch(const Tensor& img) {
  if (img.rank() == 3) {
    return Tensor({1, img.dim(0), img.dim(1), img.dim(2)}, std::vector(img.data().begin(), img.data().end()));
  }
  if (img.rank() == 4 && img.dim(0) == 1) return img.clone();
  throw ShapeError("erf_map: expected (3, s, s) images, got " + shape_str(img.shape()));
}

// Input-gradient magnitude map of one image.
std::vector<double> single_erf(const AnalysisFn& fn, const Tensor& image, const ErfOptions& options) {
  Tensor x = as_batch(image);
  const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h != w) throw ShapeError("erf_map: images must be square, got " + shape_str(image.shape()));
  x.set_requires_grad(true);
  Tensor probe;
  {
    std::optional<HoldConditionGuard> hold;
    if (options.condition == ConditionGradient::hold) hold.emplace();
    const Tensor y = fn(x);
    if (y.rank() != 4 || y.dim(0) != 1) throw ShapeError("erf_map: analysis output must be (1, c, h, w)");
    Tensor mask(y.shape());
    const std::size_t cy = y.dim(2) / 2, cx = y.dim(3) / 2, plane = y.dim(2) * y.dim(3);
    for (std::size_t ch = 0; ch < y.dim(1); ++ch) mask.data()[ch * plane + cy * y.dim(3) + cx] = 1.0;
    probe = dot(y, mask);
  }
  backward(probe);
  std::vector<double> map(h * w, 0.0);
  if (!x.has_grad()) return map;
  const auto g = x.grad();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < h * w; ++p) map[p] += std::fabs(g[ch * h * w + p]);
  }
  return map;
}

class MacsCounter {
 public:
  explicit MacsCounter(const ModelConfig& cfg) : cfg_(cfg) {}

  std::vector<MacsRecord> records;

  void add(const std::string& path, std::uint64_t macs, Shape out) { records.push_back({path, macs, std::move(out)}); }

  // Returns the output extents.
  std::pair<std::size_t, std::size_t> conv(const std::string& path, const ConvSpec& spec, std::size_t h,
                                           std::size_t w) {
    const std::size_t oh = spec.output_extent(h), ow = spec.output_extent(w);
    add(path, conv_macs(spec, h, w), {1, spec.out_channels, oh, ow});
    return {oh, ow};
  }

  void depth_rb(const std::string& path, std::size_t c, std::size_t h, std::size_t w) {
    conv(path + ".expand", ConvSpec::same(c, c, 1), h, w);
    conv(path + ".spatial", ConvSpec::depthwise(c, 3), h, w);
    conv(path + ".project", ConvSpec::same(c, c, 1), h, w);
  }

  void condition(const std::string& path, const BlockConfig& b, std::size_t outputs) {
    conv(path + ".summarize", ConvSpec{b.channels, b.hidden(), b.condition_pool, 1, 0, 1, true}, b.condition_pool,
         b.condition_pool);
    conv(path + ".reduce", ConvSpec::same(b.hidden(), outputs, 1), 1, 1);
  }

  void transform(const std::string& path, TransformKind kind, const BlockConfig& b, std::size_t h, std::size_t w) {
    const std::size_t c = b.channels, k = b.kernel;
    const Shape out{1, c, h, w};
    if (b.switches.linear_embedding) {
      conv(path + ".embed", ConvSpec::same(c, c, 1), h, w);
    } else {
      depth_rb(path + ".embed", c, h, w);
    }
    if (kind == TransformKind::spatial) {
      conv(path + ".scst.main", ConvSpec::same(c, c, 1), h, w);
      if (b.switches.static_weights) {
        conv(path + ".scst.kernel", ConvSpec{c, c, k, 1, k / 2, c, false}, h, w);
      } else {
        condition(path + ".scst.condition", b, c * k * k);
        add(path + ".scst.dynamic", static_cast<std::uint64_t>(k * k * c * h * w), out);
      }
    } else {
      conv(path + ".scct.main", ConvSpec::same(c, c, 1), h, w);
      condition(path + ".scct.condition", b, c);
      add(path + ".scct.scale", static_cast<std::uint64_t>(c * h * w), out);
    }
    conv(path + ".out_proj", ConvSpec::same(c, c, 1), h, w);
    const std::size_t hidden = c * b.gate_expansion;
    if (b.switches.use_ffn_instead_of_gate) {
      conv(path + ".ffn.expand", ConvSpec::same(c, hidden, 1), h, w);
      add(path + ".ffn.gelu", static_cast<std::uint64_t>(hidden * h * w), {1, hidden, h, w});
      conv(path + ".ffn.project", ConvSpec::same(hidden, c, 1), h, w);
    } else {
      conv(path + ".gate.expand", ConvSpec::same(c, hidden, 1), h, w);
      add(path + ".gate.hadamard", static_cast<std::uint64_t>(hidden / 2 * h * w), {1, hidden / 2, h, w});
      conv(path + ".gate.project", ConvSpec::same(hidden / 2, c, 1), h, w);
    }
  }

  void basic(const std::string& path, const BlockConfig& b, Direction dir, std::size_t h, std::size_t w) {
    std::size_t index = 0;
    for (TransformKind k : block_order(b, dir)) {
      transform(path + (k == TransformKind::spatial ? ".stb" : ".ctb") + std::to_string(index++), k, b, h, w);
    }
  }

  void model(std::size_t h, std::size_t w) {
    const std::size_t N = cfg_.N, M = cfg_.M, H = cfg_.hyper;
    std::size_t ch = h, cw = w;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t cin = s == 0 ? 3 : N, cout = s == 3 ? M : N;
      const std::string stage = "g_a.stage" + std::to_string(s);
      std::tie(ch, cw) = conv(stage + ".down.conv", ConvSpec::down(cin, cout, 5), ch, cw);
      depth_rb(stage + ".down.rb", cout, ch, cw);
      for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
        basic(stage + ".block" + std::to_string(b), cfg_.block(cout, cfg_.analysis_kernels[s]), Direction::forward,
              ch, cw);
      }
    }
    const std::size_t lh = ch, lw = cw;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t cin = s == 0 ? M : N, cout = s == 3 ? 3 : N;
      const std::string stage = "g_s.stage" + std::to_string(s);
      for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b) {
        basic(stage + ".block" + std::to_string(b), cfg_.block(cin, cfg_.synthesis_kernels[s]), Direction::inverse,
              ch, cw);
      }
      conv(stage + ".up.conv", ConvSpec::same(cin, 4 * cout, 3), ch, cw);
      ch *= 2;
      cw *= 2;
      depth_rb(stage + ".up.rb", cout, ch, cw);
    }
    auto [zh, zw] = conv("h_a.conv0", ConvSpec::same(M, H, 3), lh, lw);
    std::tie(zh, zw) = conv("h_a.conv1", ConvSpec::down(H, H, 5), zh, zw);
    std::tie(zh, zw) = conv("h_a.conv2", ConvSpec::down(H, H, 5), zh, zw);
    conv("h_s.conv0", ConvSpec::same(H, 4 * H, 5), zh, zw);
    conv("h_s.conv1", ConvSpec::same(H, 4 * H, 5), 2 * zh, 2 * zw);
    conv("h_s.conv2", ConvSpec::same(H, 2 * M, 3), 4 * zh, 4 * zw);
  }

 private:
  const ModelConfig& cfg_;
};

}  // namespace

long ErfMap::support_radius(double threshold) const {
  long radius = -1;
  const long cy = static_cast<long>(h / 2), cx = static_cast<long>(w / 2);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (values[y * w + x] > threshold) {
        radius = std::max({radius, std::labs(static_cast<long>(y) - cy), std::labs(static_cast<long>(x) - cx)});
      }
    }
  }
  return radius;
}

ErfMap erf_map(const AnalysisFn& fn, const std::vector<Tensor>& images, const ErfOptions& options) {
  if (images.empty()) throw DomainError("erf_map: no images");
  ErfMap out;
  out.options = options;
  for (const Tensor& img : images) {
    std::vector<double> m = single_erf(fn, img, options);
    const std::size_t s = img.dim(img.rank() - 1);
    if (out.image_count == 0) {
      out.h = out.w = s;
      out.values.assign(m.size(), 0.0);
    } else if (s != out.w) {
      throw ShapeError("erf_map: all images must share one size");
    }
    if (options.normalization == ErfNormalization::normalize_then_average) {
      const double peak = *std::max_element(m.begin(), m.end());
      if (peak > 0.0) {
        for (double& v : m) v /= peak;
      }
    }
    for (std::size_t i = 0; i < m.size(); ++i) out.values[i] += m[i];
    ++out.image_count;
  }
  for (double& v : out.values) v /= static_cast<double>(out.image_count);
  return out;
}

ErfMap erf_map(const CompressionModel& model, const std::vector<Tensor>& images, const ErfOptions& options) {
  for (const Tensor& img : images) {
    const std::size_t s = img.dim(img.rank() - 1);
    if (s % 16 != 0) throw ShapeError("erf_map: image size must be a multiple of 16, got " + std::to_string(s));
  }
  ErfMap map = erf_map([&](const Tensor& x) { return model.analysis(x); }, images, options);
  map.model_digest = model.config().digest();
  return map;
}

std::string erf_csv(const ErfMap& map) {
  std::string out;
  char buf[32];
  for (std::size_t y = 0; y < map.h; ++y) {
    for (std::size_t x = 0; x < map.w; ++x) {
      std::snprintf(buf, sizeof buf, "%s%.9g", x ? "," : "", map.at(y, x));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::vector<std::uint8_t> erf_pgm(const ErfMap& map) {
  const std::string header = "P5\n" + std::to_string(map.w) + " " + std::to_string(map.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const double peak = map.values.empty() ? 0.0 : *std::max_element(map.values.begin(), map.values.end());
  const double denom = std::log1p(255.0);
  for (double v : map.values) {
    const double u = peak > 0.0 ? 255.0 * std::log1p(255.0 * v / peak) / denom : 0.0;
    out.push_back(static_cast<std::uint8_t>(std::clamp(std::round(u), 0.0, 255.0)));
  }
  return out;
}

std::uint64_t MacsReport::total() const {
  std::uint64_t t = 0;
  for (const auto& r : layers) t += r.macs;
  return t;
}

std::uint64_t MacsReport::module_total(const std::string& prefix) const {
  std::uint64_t t = 0;
  for (const auto& r : layers) {
    if (r.path.rfind(prefix, 0) == 0) t += r.macs;
  }
  return t;
}

std::string MacsReport::format() const {
  std::ostringstream os;
  os << "resolution " << width << "x" << height << "\n";
  for (const auto& r : layers) os << r.path << " " << r.macs << " " << shape_str(r.output) << "\n";
  for (const char* m : {"g_a", "g_s", "h_a", "h_s"}) os << "total." << m << " " << module_total(m) << "\n";
  os << "total " << total() << "\n";
  return os.str();
}

std::uint64_t conv_macs(const ConvSpec& spec, std::size_t h, std::size_t w) {
  const std::uint64_t oh = spec.output_extent(h), ow = spec.output_extent(w);
  return static_cast<std::uint64_t>(spec.kernel * spec.kernel) * (spec.in_channels / spec.groups) *
         spec.out_channels * oh * ow;
}

std::uint64_t depthwise_macs_per_pixel(std::uint64_t c, std::uint64_t k) {
  return conv_macs({c, c, k, 1, k / 2, c, false}, 1, 1);
}

std::uint64_t dense1x1_macs_per_pixel(std::uint64_t c) { return conv_macs(ConvSpec::same(c, c, 1), 1, 1); }

MacsReport count_macs(const ModelConfig& config, std::size_t h, std::size_t w) {
  config.validate();
  if (h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0) {
    throw ShapeError("count_macs: resolution must be a positive multiple of 16, got " + std::to_string(w) + "x" +
                     std::to_string(h));
  }
  MacsCounter counter(config);
  counter.model(h, w);
  MacsReport report;
  report.height = h;
  report.width = w;
  report.layers = std::move(counter.records);
  return report;
}

}  // namespace llic
