#include <doctest.h>

#include <cmath>

#include "llic/analysis.hpp"
#include "llic/codec.hpp"
#include "llic/nn.hpp"
#include "support.hpp"

using namespace llic;
using llic::test::random_tensor;

namespace {

ModelConfig tiny(std::array<std::size_t, 4> kernels) {
  ModelConfig c;
  c.N = 8;
  c.M = 8;
  c.hyper = 8;
  c.analysis_kernels = kernels;
  c.synthesis_kernels = {3, 3, 3, 3};
  return c;
}

std::vector<Tensor> crops(std::size_t s, std::size_t count) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_tensor({3, s, s}, 100 + i, 0.0, 1.0));
  return out;
}

}  // namespace

TEST_CASE("ERF of a 1x1 convolution is the centre pixel") {
  const Tensor w = random_tensor({4, 3, 1, 1}, 1);
  const ErfMap map = erf_map([&](const Tensor& x) { return conv2d(x, ConvSpec::same(3, 4, 1), w); }, crops(15, 2));
  CHECK(map.h == 15);
  CHECK(map.image_count == 2);
  CHECK(map.support_radius(1e-12) == 0);
  CHECK(map.at(7, 7) > 0.0);
}

TEST_CASE("ERF of an 11x11 depthwise convolution stays in its window") {
  const Tensor w = random_tensor({3, 1, 11, 11}, 2);
  const ErfMap map = erf_map([&](const Tensor& x) { return conv2d(x, ConvSpec::depthwise(3, 11), w); }, crops(31, 3));
  CHECK(map.support_radius(1e-12) == 5);
  for (double v : map.values) CHECK(v >= 0.0);
  // Two stacked stride-2 5x5 convs reach at most 2 + 2*2 = 6 input pixels out.
  const Tensor a = random_tensor({3, 3, 5, 5}, 3), b = random_tensor({3, 3, 5, 5}, 4);
  const ErfMap down = erf_map(
      [&](const Tensor& x) { return conv2d(conv2d(x, ConvSpec::down(3, 3, 5), a), ConvSpec::down(3, 3, 5), b); },
      crops(32, 1));
  CHECK(down.support_radius(1e-12) <= 6);
  CHECK(down.support_radius(1e-12) >= 4);
}

TEST_CASE("ERF normalization modes") {
  const Tensor w = random_tensor({1, 3, 3, 3}, 5);
  auto fn = [&](const Tensor& x) { return conv2d(x, ConvSpec::same(3, 1, 3), w); };
  const auto imgs = crops(9, 2);
  ErfOptions per;
  per.normalization = ErfNormalization::normalize_then_average;
  const ErfMap a = erf_map(fn, imgs), b = erf_map(fn, imgs, per);
  // A linear map has the same gradient for every image.
  double peak = 0.0;
  for (double v : a.values) peak = std::max(peak, v);
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(b.values[i] == doctest::Approx(a.values[i] / peak));
  CHECK_THROWS_AS(erf_map(fn, {}), DomainError);
  CHECK_THROWS_AS(erf_map(fn, {random_tensor({3, 9, 8}, 1)}), ShapeError);
}

TEST_CASE("ERF of the analysis transform") {
  const CompressionModel small(tiny({3, 3, 3, 3}), 7);
  CHECK_THROWS_AS(erf_map(small, {random_tensor({3, 40, 40}, 1)}), ShapeError);
  ErfOptions hold;
  hold.condition = ConditionGradient::hold;
  const ErfMap m = erf_map(small, crops(64, 1), hold);
  CHECK(m.model_digest == small.config().digest());
  for (double v : m.values) CHECK(v >= 0.0);
}

TEST_CASE("ERF of the spatial data path grows with the kernel schedule") {
  // Composed receptive radius in input pixels: stage s runs at stride 2^(s+1)
  // and contributes its 5x5 stride-2 conv (1 unit), three 3x3 depthwise convs
  // (down rb, stb and ctb embeddings) and the SCST kernel half-width.
  auto radius_bound = [](const std::array<std::size_t, 4>& k) {
    long r = 0;
    for (std::size_t s = 0; s < 4; ++s) r += (4 + static_cast<long>(k[s] / 2)) << (s + 1);
    return r;
  };
  ErfOptions hold;
  hold.condition = ConditionGradient::hold;
  const CompressionModel small(tiny({3, 3, 3, 3}), 7), large(tiny({11, 11, 9, 9}), 7);
  const ErfMap m = erf_map(small, crops(320, 1), hold);
  const ErfMap l = erf_map(large, crops(320, 1), hold);
  CHECK(radius_bound({3, 3, 3, 3}) == 150);
  CHECK(m.support_radius(0.0) <= 150);
  CHECK(l.support_radius(1e-12) > m.support_radius(1e-12));
}

TEST_CASE("ERF emitters") {
  ErfMap m;
  m.h = 2;
  m.w = 3;
  m.values = {0.0, 1.0, 0.5, 2.0, 0.25, 0.0};
  CHECK(erf_csv(m) == "0,1,0.5\n2,0.25,0\n");
  const auto pgm = erf_pgm(m);
  const std::string header = "P5\n3 2\n255\n";
  REQUIRE(pgm.size() == header.size() + 6);
  CHECK(std::string(pgm.begin(), pgm.begin() + header.size()) == header);
  CHECK(pgm[header.size()] == 0);
  CHECK(pgm[header.size() + 3] == 255);
  CHECK(m.support_radius(0.3) == 1);
  CHECK(m.support_radius(5.0) == -1);
}

TEST_CASE("per-pixel cost of large depthwise versus dense 1x1") {
  CHECK(depthwise_macs_per_pixel(192, 11) == 23232u);
  CHECK(dense1x1_macs_per_pixel(192) == 36864u);
  // K^2 c < c^2 exactly when c > K^2.
  for (std::uint64_t c = 122; c <= 512; ++c) CHECK(depthwise_macs_per_pixel(c, 11) < dense1x1_macs_per_pixel(c));
  CHECK(depthwise_macs_per_pixel(121, 11) == dense1x1_macs_per_pixel(121));
  CHECK(conv_macs(ConvSpec::down(3, 192, 5), 256, 256) == 25ull * 3 * 192 * 128 * 128);
}

TEST_CASE("MACs report is additive and scales with resolution") {
  for (const ModelConfig& cfg : {ModelConfig::full_scale(), ModelConfig::desk_scale(), tiny({11, 11, 9, 9})}) {
    const MacsReport r = count_macs(cfg, 256, 256);
    std::uint64_t sum = 0;
    for (const auto& l : r.layers) sum += l.macs;
    CHECK(r.total() == sum);
    CHECK(r.module_total("g_a") + r.module_total("g_s") + r.module_total("h_a") + r.module_total("h_s") == sum);

    // Condition branches run on pooled summaries, so they do not scale.
    const MacsReport big = count_macs(cfg, 512, 512);
    REQUIRE(big.layers.size() == r.layers.size());
    for (std::size_t i = 0; i < r.layers.size(); ++i) {
      if (r.layers[i].path.find(".condition.") != std::string::npos) {
        CHECK(big.layers[i].macs == r.layers[i].macs);
      } else {
        CHECK(big.layers[i].macs == 4 * r.layers[i].macs);
      }
    }
  }
  CHECK_THROWS_AS(count_macs(ModelConfig::desk_scale(), 100, 64), ShapeError);
  CHECK(count_macs(ModelConfig::desk_scale(), 64, 64).format().find("total ") != std::string::npos);
}

TEST_CASE("MACs report agrees with the ops actually executed") {
  for (const ModelConfig& cfg : {tiny({3, 3, 3, 3}), tiny({11, 11, 9, 9}), ModelConfig::desk_scale()}) {
    CompressionModel model(cfg, 1);
    const Tensor x = random_tensor({1, 3, 64, 64}, 2, 0.0, 1.0);
    MacsRecorder rec;
    {
      NoGradGuard no_grad;
      const Tensor y = model.analysis(x);
      const Tensor z = model.hyper_analysis(y);
      model.hyper_synthesis(z, y.dim(2), y.dim(3));
      model.synthesis(y);
    }
    CHECK(rec.total() == count_macs(cfg, 64, 64).total());
  }
}

TEST_CASE("MACs do not depend on parameter values") {
  CompressionModel a(ModelConfig::desk_scale(), 1), b(ModelConfig::desk_scale(), 2);
  test::randomize(b.params(), 3);
  const Tensor x = random_tensor({1, 3, 48, 48}, 2, 0.0, 1.0);
  std::uint64_t totals[2];
  for (int i = 0; i < 2; ++i) {
    MacsRecorder rec;
    NoGradGuard no_grad;
    (i ? b : a).analysis(x);
    totals[i] = rec.total();
  }
  CHECK(totals[0] == totals[1]);
}
