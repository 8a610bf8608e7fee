#include "llic/selftest.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "llic/analysis.hpp"
#include "llic/checkpoint.hpp"
#include "llic/codec.hpp"
#include "llic/entropy.hpp"
#include "llic/gradcheck.hpp"
#include "llic/metrics.hpp"
#include "llic/nn.hpp"
#include "llic/ops.hpp"
#include "llic/train.hpp"

namespace llic {

namespace {

Tensor noise(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

ModelConfig tiny() {
  ModelConfig c;
  c.N = c.M = c.hyper = 8;
  c.analysis_kernels = c.synthesis_kernels = {3, 3, 3, 3};
  return c;
}

BlockConfig block(std::size_t c, std::size_t k) {
  BlockConfig b;
  b.channels = c;
  b.kernel = k;
  return b;
}

std::string fmt(const char* label, double v) {
  std::ostringstream os;
  os << label << v;
  return os.str();
}

SelfTestResult gradients() {
  Rng rng(1);
  ParamSet ps;
  TransformBlock stb(ps, "stb", TransformKind::spatial, block(4, 3), rng);
  TransformBlock ctb(ps, "ctb", TransformKind::channel, block(4, 3), rng);
  const Tensor x = noise({1, 4, 6, 6}, 2);
  const Tensor w = noise({4, 4, 3, 3}, 3);
  double worst = 0.0;
  worst = std::max(worst, grad_check([&](const Tensor& t) { return conv2d(t, ConvSpec::same(4, 4, 3), w); }, x));
  worst = std::max(worst, grad_check([](const Tensor& t) { return gelu_tanh(t); }, x));
  worst = std::max(worst, grad_check([&](const Tensor& t) { return stb.forward(t); }, x));
  worst = std::max(worst, grad_check([&](const Tensor& t) { return ctb.forward(t); }, x));
  return {"gradients match central differences", worst < 1e-5, fmt("max rel err ", worst)};
}

SelfTestResult identities() {
  Rng rng(4);
  ParamSet ps;
  BasicBlock fwd(ps, "f", block(8, 5), Direction::forward, rng);
  BasicBlock inv(ps, "i", block(8, 5), Direction::inverse, rng);
  GateBlock gate(ps, "g", 8, 2, rng);
  ps.fill(0.0);
  const Tensor x = noise({2, 8, 7, 9}, 5);
  const bool ok = same_bits(fwd.forward(x), x) && same_bits(inv.forward(x), x) && same_bits(gate.forward(x), x);
  return {"zero parameters give identity blocks", ok, ""};
}

SelfTestResult entropy() {
  const auto& tables = gaussian_tables();
  Rng rng(6);
  std::vector<std::int64_t> sym(20000);
  std::vector<const CdfTable*> refs(sym.size());
  double bits = 0.0;
  for (std::size_t i = 0; i < sym.size(); ++i) {
    refs[i] = &tables[rng.below(tables.size())];
    const auto slots = static_cast<std::int64_t>(refs[i]->slots());
    sym[i] = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(slots + 4))) - refs[i]->bound - 2;
    bits += refs[i]->cost_bits(sym[i]);
  }
  const auto bytes = range_encode(sym, refs);
  const bool exact = range_decode(bytes, refs, sym.size()) == sym;
  const double ideal = bits / 8.0;
  const bool tight = std::fabs(static_cast<double>(bytes.size()) - ideal) <= 0.01 * ideal + 16;
  return {"range coder round trip and efficiency", exact && tight,
          std::to_string(bytes.size()) + " bytes vs " + std::to_string(ideal) + " ideal"};
}

SelfTestResult codec() {
  const CompressionModel model(tiny(), 7);
  const Tensor x = noise({3, 37, 53}, 8, 0.0, 1.0);
  const EncodeResult enc = encode_image(model, x);
  const DecodeResult dec = decode_image(model, Bitstream::parse(enc.stream.serialize()));
  const bool ok = same_bits(enc.y_hat, dec.y_hat) && dec.x_hat.shape() == Shape{1, 3, 37, 53};
  return {"codec decoder rebuilds the encoder latents", ok, fmt("bpp ", enc.stream.bpp())};
}

SelfTestResult macs() {
  const bool ok = depthwise_macs_per_pixel(192, 11) == 23232 && dense1x1_macs_per_pixel(192) == 36864 &&
                  gate_macs_per_pixel(192) == 110784 && ffn_macs_per_pixel(192) == 147840;
  return {"per-pixel MACs of depthwise, dense, gate and FFN", ok, ""};
}

SelfTestResult curves() {
  const RDCurve a{{0, 0.12, 29.1, {}}, {1, 0.25, 31.4, {}}, {2, 0.48, 33.8, {}}, {3, 0.91, 36.2, {}}};
  RDCurve b = a;
  for (auto& p : b) p.bpp *= 2.0;
  const double same = bd_rate(a, a), doubled = bd_rate(a, b);
  return {"BD-rate of identical and doubled curves", same == 0.0 && std::fabs(doubled - 100.0) < 1e-6,
          fmt("doubled ", doubled)};
}

SelfTestResult quality() {
  const Tensor x = noise({1, 3, 160, 160}, 9, 0.1, 0.9);
  const double p = psnr(x, add_scalar(x, 1.0 / 255.0));
  return {"PSNR and MS-SSIM fixed points", std::fabs(p - 48.131) < 1e-3 && ms_ssim(x, x) == 1.0, fmt("psnr ", p)};
}

SelfTestResult training() {
  TrainConfig t;
  t.total_steps = 3;
  t.batch_size = 1;
  t.patch_small = t.patch_large = 48;
  t.seed = 10;
  const std::vector<Tensor> images{noise({3, 60, 60}, 11, 0.0, 1.0)};
  CompressionModel a(tiny(), 12), b(tiny(), 12);
  Trainer ta(a, t, images), tb(b, t, images);
  ta.run(3);
  tb.run(3);
  const bool ok = serialize_checkpoint(ta.checkpoint()) == serialize_checkpoint(tb.checkpoint());
  return {"seeded training is bitwise reproducible", ok, ""};
}

}  // namespace

std::vector<SelfTestResult> run_selftest(const std::function<void(const SelfTestResult&)>& on_result) {
  std::vector<SelfTestResult> out;
  const std::pair<const char*, SelfTestResult (*)()> checks[] = {
      {"gradients", gradients}, {"identities", identities}, {"entropy", entropy}, {"codec", codec},
      {"macs", macs},           {"curves", curves},         {"quality", quality}, {"training", training}};
  for (const auto& [label, check] : checks) {
    SelfTestResult r;
    try {
      r = check();
    } catch (const std::exception& e) {
      r = {label, false, std::string("threw: ") + e.what()};
    }
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace llic
