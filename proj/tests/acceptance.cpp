// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria (informational lines do not count).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "llic/analysis.hpp"
#include "llic/blocks.hpp"
#include "llic/checkpoint.hpp"
#include "llic/codec.hpp"
#include "llic/entropy.hpp"
#include "llic/gradcheck.hpp"
#include "llic/metrics.hpp"
#include "llic/nn.hpp"
#include "llic/ops.hpp"
#include "llic/train.hpp"
#include "support.hpp"

using namespace llic;
using llic::test::bitwise_equal;
using llic::test::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

BlockConfig block(std::size_t c, std::size_t k) {
  BlockConfig b;
  b.channels = c;
  b.kernel = k;
  return b;
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, const TensorFn& fn, const Tensor& x) { errs.emplace_back(name, grad_check(fn, x)); };

  const Tensor x = random_tensor({2, 4, 6, 6}, 11, 0.2, 1.5);
  const Tensor b = random_tensor({2, 4, 6, 6}, 12, 0.5, 1.5);
  check("add", [&](const Tensor& t) { return add(t, b); }, x);
  check("sub", [&](const Tensor& t) { return sub(b, t); }, x);
  check("mul", [&](const Tensor& t) { return mul(t, b); }, x);
  check("div", [&](const Tensor& t) { return div(b, t); }, x);
  check("scale", [](const Tensor& t) { return scale(t, -1.7); }, x);
  check("add_scalar", [](const Tensor& t) { return square(add_scalar(t, 0.3)); }, x);
  check("neg", [](const Tensor& t) { return neg(t); }, x);
  check("exp", [](const Tensor& t) { return exp(t); }, x);
  check("log", [](const Tensor& t) { return log(t); }, x);
  check("tanh", [](const Tensor& t) { return tanh(t); }, x);
  check("sqrt", [](const Tensor& t) { return sqrt(t); }, x);
  check("abs", [&](const Tensor& t) { return abs(sub(t, b)); }, x);
  check("clamp", [](const Tensor& t) { return clamp(t, 0.7, 1.2); }, x);
  check("square", [](const Tensor& t) { return square(t); }, x);
  check("pow", [](const Tensor& t) { return pow_nonneg(t, 0.3); }, x);
  check("reduce_sum", [](const Tensor& t) { return reduce(ReduceKind::sum, t, {1, 3}); }, x);
  check("reduce_mean", [](const Tensor& t) { return reduce(ReduceKind::mean, t, {2}); }, x);
  check("sum", [](const Tensor& t) { return sum(square(t)); }, x);
  check("mean", [](const Tensor& t) { return mean(square(t)); }, x);
  check("reshape", [](const Tensor& t) { return square(reshape(t, {8, 36})); }, x);
  check("dot", [](const Tensor& t) { return dot(t, square(t)); }, x);

  const Tensor s = random_tensor({2, 4, 6, 6}, 13, -2.0, 2.0);
  const Tensor w = random_tensor({6, 4, 3, 3}, 14), bias = random_tensor({6}, 15);
  const ConvSpec same = ConvSpec::same(4, 6, 3), down = ConvSpec::down(4, 6, 5);
  const Tensor wd = random_tensor({6, 4, 5, 5}, 16);
  const Tensor wdw = random_tensor({4, 1, 5, 5}, 17);
  check("conv2d/input", [&](const Tensor& t) { return conv2d(t, same, w, bias); }, s);
  check("conv2d/weight", [&](const Tensor& t) { return conv2d(s, same, t, bias); }, w);
  check("conv2d/bias", [&](const Tensor& t) { return conv2d(s, same, w, t); }, bias);
  check("conv2d/stride2", [&](const Tensor& t) { return conv2d(t, down, wd); }, s);
  check("conv2d/depthwise", [&](const Tensor& t) { return conv2d(t, ConvSpec::depthwise(4, 5), wdw); }, s);
  const Tensor k = random_tensor({2, 4, 3, 3}, 18);
  check("dynamic_depthwise/input", [&](const Tensor& t) { return conv2d_dynamic_depthwise(t, k); }, s);
  check("dynamic_depthwise/kernels", [&](const Tensor& t) { return conv2d_dynamic_depthwise(s, t); }, k);
  check("adaptive_avg_pool", [](const Tensor& t) { return adaptive_avg_pool(t, 3, 3); }, random_tensor({2, 4, 7, 8}, 19));
  const Tensor gamma = random_tensor({4}, 20, 0.5, 1.5), beta = random_tensor({4}, 21);
  check("layer_norm/input", [&](const Tensor& t) { return layer_norm(t, gamma, beta); }, s);
  check("layer_norm/gamma", [&](const Tensor& t) { return layer_norm(s, t, beta); }, gamma);
  check("layer_norm/beta", [&](const Tensor& t) { return layer_norm(s, gamma, t); }, beta);
  check("gelu", [](const Tensor& t) { return gelu_tanh(t); }, s);
  // Kinked activations are checked away from the kink.
  const Tensor away = random_tensor({2, 4, 6, 6}, 22, 0.1, 2.0);
  check("relu", [](const Tensor& t) { return relu(sub(t, Tensor(t.shape(), 1.05))); }, away);
  check("leaky_relu", [](const Tensor& t) { return leaky_relu(sub(t, Tensor(t.shape(), 1.05))); }, away);
  check("softplus", [](const Tensor& t) { return softplus(t); }, s);
  check("pixel_shuffle", [](const Tensor& t) { return square(pixel_shuffle(t, 2)); }, s);
  check("pixel_unshuffle", [](const Tensor& t) { return square(pixel_unshuffle(t, 2)); }, s);
  check("channel_split", [](const Tensor& t) {
    auto [lo, hi] = channel_split(t);
    return mul(lo, hi);
  }, s);
  check("channel_concat", [](const Tensor& t) { return channel_concat(square(t), t); }, s);
  const Tensor f = random_tensor({2, 4, 1, 1}, 23);
  check("channel_scale/input", [&](const Tensor& t) { return channel_scale(t, f); }, s);
  check("channel_scale/factors", [&](const Tensor& t) { return channel_scale(s, t); }, f);
  check("repeat_batch", [](const Tensor& t) { return square(repeat_batch(t, 2)); }, random_tensor({1, 4, 6, 6}, 24));
  check("pad_replicate", [](const Tensor& t) { return pad_replicate(t, 8, 7); }, s);
  check("crop", [](const Tensor& t) { return crop(t, 4, 3); }, s);

  Rng rng(4);
  ParamSet ps;
  DepthRB rb(ps, "rb", 4, rng);
  GateBlock gate(ps, "gate", 4, 2, rng);
  FfnBlock ffn(ps, "ffn", 4, 2, rng);
  Scst scst(ps, "scst", block(4, 3), rng);
  Scct scct(ps, "scct", block(4, 3), rng);
  TransformBlock stb(ps, "stb", TransformKind::spatial, block(4, 3), rng);
  TransformBlock ctb(ps, "ctb", TransformKind::channel, block(4, 3), rng);
  BasicBlock fwd(ps, "fwd", block(4, 3), Direction::forward, rng);
  BasicBlock inv(ps, "inv", block(4, 3), Direction::inverse, rng);
  DownsampleBlock dn(ps, "down", 3, 4, rng);
  UpsampleBlock up(ps, "up", 4, 3, rng);
  test::randomize(ps, 44, 0.4);
  const Tensor x8 = random_tensor({2, 4, 8, 8}, 25);
  check("depth_rb", [&](const Tensor& t) { return rb.forward(t); }, x8);
  check("gate", [&](const Tensor& t) { return gate.forward(t); }, x8);
  check("ffn", [&](const Tensor& t) { return ffn.forward(t); }, x8);
  check("scst", [&](const Tensor& t) { return scst.forward(t); }, x8);
  check("scct", [&](const Tensor& t) { return scct.forward(t); }, x8);
  check("stb", [&](const Tensor& t) { return stb.forward(t); }, x8);
  check("ctb", [&](const Tensor& t) { return ctb.forward(t); }, x8);
  check("basic/forward", [&](const Tensor& t) { return fwd.forward(t); }, x8);
  check("basic/inverse", [&](const Tensor& t) { return inv.forward(t); }, x8);
  check("downsample", [&](const Tensor& t) { return dn.forward(t); }, random_tensor({2, 3, 8, 8}, 26));
  check("upsample", [&](const Tensor& t) { return up.forward(t); }, random_tensor({2, 4, 4, 4}, 27));
  for (const char* name : {"scst.condition.summarize.weight", "scst.condition.reduce.weight", "scst.main.weight",
                           "scct.condition.summarize.weight", "scct.condition.reduce.bias", "stb.out_proj.weight"}) {
    const bool on_scst = std::string(name).starts_with("scst");
    const bool on_stb = std::string(name).starts_with("stb");
    errs.emplace_back(std::string("param ") + name, test::param_grad_check(test::param(ps, name), [&] {
                        return on_stb ? stb.forward(x8) : on_scst ? scst.forward(x8) : scct.forward(x8);
                      }));
  }

  const Tensor xr = random_tensor({1, 3, 8, 8}, 28, 0.1, 0.9);
  check("rd_loss", [&](const Tensor& t) {
    ForwardResult r;
    r.x_hat = t;
    r.bits_y = sum(square(t));
    r.bits_z = Tensor::scalar(1.0);
    return rd_loss(xr, r, 0.0130).loss;
  }, random_tensor({1, 3, 8, 8}, 29, 0.1, 0.9));

  const auto worst = std::max_element(errs.begin(), errs.end(), [](auto& a, auto& c) { return a.second < c.second; });
  const double secs = seconds_since(t0);
  return {worst->second < 1e-5 && secs < 300.0,
          fmt("%zu checks, worst %s rel err %.2e (< 1e-5), %.1f s (< 300 s)", errs.size(), worst->first.c_str(),
              worst->second, secs)};
}

// ---------------------------------------------------------------- 2

Outcome zero_identity() {
  const Tensor x = random_tensor({2, 8, 9, 7}, 1);
  std::vector<std::string> broken;
  auto run = [&](const BlockConfig& cfg, const std::string& tag) {
    Rng rng(1);
    ParamSet ps;
    DepthRB rb(ps, "rb", 8, rng);
    GateBlock gate(ps, "gate", 8, 2, rng);
    FfnBlock ffn(ps, "ffn", 8, 2, rng);
    TransformBlock stb(ps, "stb", TransformKind::spatial, cfg, rng);
    TransformBlock ctb(ps, "ctb", TransformKind::channel, cfg, rng);
    BasicBlock fwd(ps, "fwd", cfg, Direction::forward, rng);
    BasicBlock inv(ps, "inv", cfg, Direction::inverse, rng);
    ps.fill(0.0);
    const std::pair<const char*, std::function<Tensor()>> blocks[] = {
        {"depth_rb", [&] { return rb.forward(x); }}, {"gate", [&] { return gate.forward(x); }},
        {"ffn", [&] { return ffn.forward(x); }},     {"stb", [&] { return stb.forward(x); }},
        {"ctb", [&] { return ctb.forward(x); }},     {"basic", [&] { return fwd.forward(x); }},
        {"inverse_basic", [&] { return inv.forward(x); }}};
    for (const auto& [name, fn] : blocks) {
      if (!bitwise_equal(fn(), x)) broken.push_back(tag + name);
    }
  };
  run(block(8, 5), "");
  BlockConfig alt = block(8, 11);
  alt.switches.static_weights = true;
  alt.switches.use_ffn_instead_of_gate = true;
  alt.switches.linear_embedding = true;
  run(alt, "ablation/");
  std::string detail = "14 block variants bitwise identity";
  for (const auto& b : broken) detail += " " + b;
  return {broken.empty(), broken.empty() ? detail : "not identity:" + detail.substr(detail.find(' '))};
}

// ---------------------------------------------------------------- 3

Outcome entropy_exactness() {
  const auto& tables = gaussian_tables();
  Rng rng(31);
  std::size_t failures = 0, escapes = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.below(64);
    std::vector<CdfTable> own;
    own.reserve(n);
    std::vector<const CdfTable*> refs(n);
    std::vector<std::int64_t> sym(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.below(4) == 0) {
        own.push_back(build_cdf(rng.uniform(0.11, 60.0), rng.uniform(-0.5, 0.5)));
        refs[i] = &own.back();
      } else {
        refs[i] = &tables[rng.below(tables.size())];
      }
      const std::int64_t bound = refs[i]->bound;
      const auto draw = rng.below(16);
      if (draw == 0) {
        sym[i] = (rng.below(2) ? 1 : -1) * static_cast<std::int64_t>(bound + 1 + rng.below(1u << 20));
      } else if (draw == 1) {
        sym[i] = rng.below(2) ? std::numeric_limits<std::int64_t>::max() : -std::numeric_limits<std::int64_t>::max();
      } else {
        sym[i] = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(2 * bound + 1))) - bound;
      }
      escapes += sym[i] < -bound || sym[i] > bound;
    }
    const auto bytes = range_encode(sym, refs);
    if (range_decode(bytes, refs, n) != sym) ++failures;
  }

  // Efficiency against -log2 of the quantized frequencies, read straight from
  // the CDF arrays.
  double worst_excess = -1e9;
  bool tight = true;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng r(100 + seed);
    const std::size_t n = 20000;
    std::vector<const CdfTable*> refs(n);
    std::vector<std::int64_t> sym(n);
    double ideal_bits = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      refs[i] = &tables[r.below(tables.size())];
      const auto& cdf = refs[i]->cdf;
      std::size_t slot;
      do {
        const auto v = static_cast<std::uint32_t>(r.below(kCdfTotal));
        slot = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), v) - cdf.begin()) - 1;
      } while (slot == cdf.size() - 2);
      sym[i] = static_cast<std::int64_t>(slot) - refs[i]->bound;
      ideal_bits -= std::log2(static_cast<double>(cdf[slot + 1] - cdf[slot]) / kCdfTotal);
    }
    const auto bytes = range_encode(sym, refs);
    if (range_decode(bytes, refs, n) != sym) ++failures;
    const double ideal = ideal_bits / 8.0, got = static_cast<double>(bytes.size());
    tight = tight && std::fabs(got - ideal) <= 0.01 * ideal + 16.0;
    worst_excess = std::max(worst_excess, (got - ideal) / ideal);
  }
  return {failures == 0 && tight,
          fmt("10^4 round trips, %zu escapes, %zu mismatches; 4 x 2e4-symbol streams, worst excess %+.3f%% (<= 1%% + 16 B)",
              escapes, failures, 100.0 * worst_excess)};
}

// ---------------------------------------------------------------- 4

Outcome rate_estimate() {
  const CompressionModel model(ModelConfig::desk_scale(), 2024);
  double worst = 0.0;
  bool ok = true;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Tensor img = random_tensor({3, 64, 64}, 500 + i, 0.0, 1.0);
    const EncodeResult enc = encode_image(model, img);
    const double actual = 8.0 * static_cast<double>(enc.stream.z_payload.size() + enc.stream.y_payload.size());
    NoGradGuard no_grad;
    const ForwardResult f = model.forward(reshape(img, {1, 3, 64, 64}), ForwardMode::eval);
    const double estimate = f.bits_y.item() + f.bits_z.item();
    const double slack = 0.01 * estimate + 512.0;
    ok = ok && std::fabs(actual - estimate) <= slack;
    worst = std::max(worst, std::fabs(actual - estimate) / slack);
  }
  return {ok, fmt("20 images, worst |actual - estimate| = %.3f of the allowed 1%% + 512 bits", worst)};
}

// ---------------------------------------------------------------- 5

Outcome codec_determinism() {
  const CompressionModel model(ModelConfig::desk_scale(), 5);
  std::string detail;
  bool ok = true;
  for (std::size_t s : {37u, 64u, 511u, 768u}) {
    const Tensor x = random_tensor({3, s, s}, s, 0.0, 1.0);
    const EncodeResult enc = encode_image(model, x);
    const auto bytes = enc.stream.serialize();
    const DecodeResult dec = decode_image(model, Bitstream::parse(bytes));
    const bool same = bitwise_equal(enc.y_hat, dec.y_hat) && dec.x_hat.shape() == Shape{1, 3, s, s};
    ok = ok && same;
    detail += fmt("%zu:%s ", s, same ? "ok" : "MISMATCH");
  }
  return {ok, detail + "(y_hat bitwise, dims restored)"};
}

// ---------------------------------------------------------------- 6

Outcome cost_model() {
  const auto dw = depthwise_macs_per_pixel(192, 11), dense = dense1x1_macs_per_pixel(192);
  const auto gate = gate_macs_per_pixel(192), ffn = ffn_macs_per_pixel(192);

  // The same figures from the executed ops, on a 1x1-pixel view of each layer.
  const Tensor x = random_tensor({1, 192, 4, 4}, 3);
  Rng rng(1);
  ParamSet ps;
  GateBlock g(ps, "g", 192, 2, rng);
  FfnBlock fb(ps, "f", 192, 2, rng);
  const Tensor wdw = random_tensor({192, 1, 11, 11}, 4), w1 = random_tensor({192, 192, 1, 1}, 5);
  auto per_pixel = [&](const std::function<void()>& fn) {
    MacsRecorder rec;
    NoGradGuard no_grad;
    fn();
    return rec.total() / 16;
  };
  const auto run_dw = per_pixel([&] { conv2d(x, ConvSpec::depthwise(192, 11), wdw); });
  const auto run_dense = per_pixel([&] { conv2d(x, ConvSpec::same(192, 192, 1), w1); });
  const auto run_gate = per_pixel([&] { g.forward(x); });
  const auto run_ffn = per_pixel([&] { fb.forward(x); });

  const bool ok = dw == 23232 && dense == 36864 && gate == 110784 && ffn == 147840 && gate < ffn && run_dw == dw &&
                  run_dense == dense && run_gate == gate && run_ffn == ffn;
  return {ok, fmt("depthwise %llu vs dense %llu, gate %llu vs ffn %llu; executed %llu/%llu/%llu/%llu",
                  (unsigned long long)dw, (unsigned long long)dense, (unsigned long long)gate,
                  (unsigned long long)ffn, (unsigned long long)run_dw, (unsigned long long)run_dense,
                  (unsigned long long)run_gate, (unsigned long long)run_ffn)};
}

// ---------------------------------------------------------------- 7 and 11

Tensor overfit_image() {
  Tensor img({3, 64, 64});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < 64; ++y) {
      for (std::size_t x = 0; x < 64; ++x) {
        img.data()[(c * 64 + y) * 64 + x] = 0.5 + 0.4 * std::sin(0.1 * x * (c + 1) + 0.07 * y);
      }
    }
  }
  return img;
}

TrainConfig overfit_config() {
  TrainConfig t;
  t.lambda = 0.0483;
  t.batch_size = 1;
  t.patch_small = t.patch_large = 64;
  t.total_steps = 2000;
  t.lr_decay = false;
  t.seed = 7;
  return t;
}

double eval_psnr(const CompressionModel& model, const Tensor& img) {
  NoGradGuard no_grad;
  const Tensor x = reshape(img, {1, 3, 64, 64});
  return psnr(x, model.forward(x, ForwardMode::eval).x_hat);
}

struct OverfitRun {
  std::vector<std::uint8_t> final_ckpt;
  std::vector<std::uint8_t> mid_ckpt;  // after 1000 steps
  std::vector<double> losses;
  double psnr0 = 0.0, psnr1 = 0.0, seconds = 0.0;
};

OverfitRun overfit_run() {
  OverfitRun r;
  const Tensor img = overfit_image();
  CompressionModel model(ModelConfig::desk_scale(), 1);
  r.psnr0 = eval_psnr(model, img);
  const auto t0 = Clock::now();
  Trainer trainer(model, overfit_config(), {img});
  trainer.run(1000, [&](const StepStats& s) { r.losses.push_back(s.loss); });
  r.mid_ckpt = serialize_checkpoint(trainer.checkpoint());
  trainer.run(2000, [&](const StepStats& s) { r.losses.push_back(s.loss); });
  r.seconds = seconds_since(t0);
  r.final_ckpt = serialize_checkpoint(trainer.checkpoint());
  r.psnr1 = eval_psnr(model, img);
  return r;
}

Outcome overfit(const OverfitRun& r) {
  auto mean = [&](std::size_t from, std::size_t to) {
    double acc = 0.0;
    for (std::size_t i = from; i < to; ++i) acc += r.losses[i];
    return acc / static_cast<double>(to - from);
  };
  const double early = mean(0, 100), late = mean(1900, 2000);
  const double gain = r.psnr1 - r.psnr0;
  return {late < 0.5 * early && gain >= 5.0 && r.seconds <= 1800.0,
          fmt("trailing loss %.3f vs %.3f at step 100 (ratio %.3f < 0.5), PSNR %.2f -> %.2f dB (+%.2f >= 5), %.0f s (<= 1800 s)",
              late, early, late / early, r.psnr0, r.psnr1, gain, r.seconds)};
}

Outcome reproducibility(const OverfitRun& first) {
  const OverfitRun second = overfit_run();
  const bool twin = second.final_ckpt == first.final_ckpt && second.losses == first.losses;

  // Resume the first run from its step-1000 checkpoint into a differently seeded model.
  CompressionModel model(ModelConfig::desk_scale(), 99);
  Trainer resumed(model, overfit_config(), {overfit_image()});
  resumed.restore(parse_checkpoint(first.mid_ckpt));
  std::vector<double> tail;
  resumed.run(2000, [&](const StepStats& s) { tail.push_back(s.loss); });
  const bool resume = serialize_checkpoint(resumed.checkpoint()) == first.final_ckpt &&
                      std::equal(tail.begin(), tail.end(), first.losses.begin() + 1000);
  return {twin && resume, fmt("second seeded run %s; resume from step 1000 %s (%zu-byte checkpoints)",
                              twin ? "bitwise identical" : "DIFFERS", resume ? "bitwise identical" : "DIFFERS",
                              first.final_ckpt.size())};
}

// ---------------------------------------------------------------- 8

ModelConfig erf_config(std::array<std::size_t, 4> kernels) {
  ModelConfig c = ModelConfig::desk_scale();
  c.analysis_kernels = kernels;
  return c;
}

std::pair<long, long> erf_radii(ConditionGradient mode) {
  std::vector<Tensor> images;
  for (std::uint64_t i = 0; i < 2; ++i) images.push_back(random_tensor({3, 320, 320}, 700 + i, 0.0, 1.0));
  ErfOptions opt;
  opt.condition = mode;
  const CompressionModel small(erf_config({3, 3, 3, 3}), 7), large(erf_config({11, 11, 9, 9}), 7);
  return {erf_map(small, images, opt).support_radius(1e-12), erf_map(large, images, opt).support_radius(1e-12)};
}

Outcome erf_ordering() {
  const auto [small, large] = erf_radii(ConditionGradient::propagate);
  return {large > small, fmt("support radius at 1e-12: K={11,11,9,9} %ld vs K={3,3,3,3} %ld on 320x320 (max 160)",
                             large, small)};
}

Outcome erf_spatial_path() {
  const auto [small, large] = erf_radii(ConditionGradient::hold);
  return {large > small, fmt("generated weights held constant: K={11,11,9,9} %ld vs K={3,3,3,3} %ld", large, small)};
}

// ---------------------------------------------------------------- 9

RDCurve curve(std::vector<double> bpp, std::vector<double> q) {
  RDCurve c;
  for (std::size_t i = 0; i < bpp.size(); ++i) c.push_back({static_cast<int>(i), bpp[i], q[i], std::nullopt});
  return c;
}

// Cubic through four points, evaluated in Lagrange form.
double lagrange(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double l = 1.0;
    for (std::size_t j = 0; j < xs.size(); ++j) {
      if (j != i) l *= (x - xs[j]) / (xs[i] - xs[j]);
    }
    acc += ys[i] * l;
  }
  return acc;
}

// Midpoint rule with 10^6 cells over the overlapping quality range.
double bd_oracle(const RDCurve& a, const RDCurve& t) {
  std::vector<double> qa, ra, qt, rt;
  for (const auto& p : a) qa.push_back(p.psnr), ra.push_back(std::log(p.bpp));
  for (const auto& p : t) qt.push_back(p.psnr), rt.push_back(std::log(p.bpp));
  const double lo = std::max(*std::min_element(qa.begin(), qa.end()), *std::min_element(qt.begin(), qt.end()));
  const double hi = std::min(*std::max_element(qa.begin(), qa.end()), *std::max_element(qt.begin(), qt.end()));
  const int n = 1'000'000;
  const double h = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double q = lo + h * (i + 0.5);
    acc += lagrange(qt, rt, q) - lagrange(qa, ra, q);
  }
  return (std::exp(acc / n) - 1.0) * 100.0;
}

Outcome bd_analytics() {
  const RDCurve anchor = curve({0.12, 0.25, 0.48, 0.91}, {29.1, 31.4, 33.8, 36.2});
  RDCurve doubled = anchor;
  for (auto& p : doubled) p.bpp *= 2.0;
  const double same = bd_rate(anchor, anchor), twice = bd_rate(anchor, doubled);
  const RDCurve cases[] = {curve({0.10, 0.23, 0.47, 0.83}, {29.5, 31.9, 34.1, 36.9}),
                           curve({0.2, 0.3, 0.5, 0.7}, {30.0, 31.2, 33.0, 34.1}),
                           curve({0.09, 0.3, 0.6, 1.4}, {28.0, 31.8, 34.0, 37.5})};
  double worst = 0.0;
  for (const auto& c : cases) worst = std::max(worst, std::fabs(bd_rate(anchor, c) - bd_oracle(anchor, c)));
  return {same == 0.0 && std::fabs(twice - 100.0) <= 1e-6 && worst < 0.01,
          fmt("identical %.1f%%, doubled %+.9f%%, 3 synthetic cases worst |delta| vs oracle %.2e (< 0.01)", same,
              twice, worst)};
}

// ---------------------------------------------------------------- 10

long double ssim_level(const std::vector<long double>& a, const std::vector<long double>& b, std::size_t h,
                       std::size_t w, bool cs_only) {
  // Axes shorter than the window get a single tap (no smoothing).
  const int kh = h >= 11 ? 11 : 1, kw = w >= 11 ? 11 : 1;
  long double win[11][11], total = 0;
  for (int i = 0; i < kh; ++i) {
    for (int j = 0; j < kw; ++j) {
      const int di = kh == 11 ? i - 5 : 0, dj = kw == 11 ? j - 5 : 0;
      win[i][j] = std::exp(-(di * di + dj * dj) / (2.0L * 1.5L * 1.5L));
      total += win[i][j];
    }
  }
  const long double c1 = 1e-4L, c2 = 9e-4L;
  long double acc = 0;
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      long double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < kh; ++i) {
        for (int j = 0; j < kw; ++j) {
          const long double g = win[i][j] / total;
          const long double u = a[(y + i) * w + x + j], v = b[(y + i) * w + x + j];
          ma += g * u;
          mb += g * v;
          saa += g * u * u;
          sbb += g * v * v;
          sab += g * u * v;
        }
      }
      const long double cs = (2 * (sab - ma * mb) + c2) / (saa - ma * ma + sbb - mb * mb + c2);
      acc += cs_only ? cs : cs * (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    }
  }
  return acc / static_cast<long double>(oh * ow);
}

double ms_ssim_oracle(const Tensor& x, const Tensor& y) {
  const long double weights[5] = {0.0448L, 0.2856L, 0.3001L, 0.2363L, 0.1333L};
  const std::size_t c = x.dim(1), h0 = x.dim(2), w0 = x.dim(3);
  long double total = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::vector<long double> a(x.data().begin() + ch * h0 * w0, x.data().begin() + (ch + 1) * h0 * w0);
    std::vector<long double> b(y.data().begin() + ch * h0 * w0, y.data().begin() + (ch + 1) * h0 * w0);
    std::size_t h = h0, w = w0;
    long double prod = 1;
    for (int level = 0; level < 5; ++level) {
      prod *= std::pow(std::max(0.0L, ssim_level(a, b, h, w, level < 4)), weights[level]);
      std::vector<long double> na((h / 2) * (w / 2)), nb(na.size());
      for (std::size_t i = 0; i < h / 2; ++i) {
        for (std::size_t j = 0; j < w / 2; ++j) {
          const std::size_t p = 2 * i * w + 2 * j;
          na[i * (w / 2) + j] = (a[p] + a[p + 1] + a[p + w] + a[p + w + 1]) / 4;
          nb[i * (w / 2) + j] = (b[p] + b[p + 1] + b[p + w] + b[p + w + 1]) / 4;
        }
      }
      a.swap(na);
      b.swap(nb);
      h /= 2;
      w /= 2;
    }
    total += prod;
  }
  return static_cast<double>(total / static_cast<long double>(c));
}

Outcome metric_sanity() {
  const Tensor x = random_tensor({1, 3, 64, 64}, 41, 0.1, 0.9);
  const double p = psnr(x, add_scalar(x, 1.0 / 255.0));
  const Tensor big = random_tensor({1, 3, 176, 176}, 42, 0.0, 1.0);
  const double self = ms_ssim(big, big);
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 5; ++i) {
    const std::size_t h = 160 + 8 * i, w = 192 - 8 * i;
    Tensor a({1, 3, h, w}), b({1, 3, h, w});
    Rng rng(60 + i);
    const double noise = 0.02 + 0.05 * static_cast<double>(i);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t q = 0; q < w; ++q) {
          const double v = 0.5 + 0.35 * std::sin(0.06 * r + 0.4 * c + 0.1 * i) * std::cos(0.045 * q);
          a.data()[(c * h + r) * w + q] = v;
          b.data()[(c * h + r) * w + q] = std::clamp(v + rng.uniform(-noise, noise), 0.0, 1.0);
        }
      }
    }
    worst = std::max(worst, std::fabs(ms_ssim(a, b) - ms_ssim_oracle(a, b)));
  }
  return {std::fabs(p - 48.131) <= 1e-3 && self == 1.0 && worst < 1e-6,
          fmt("psnr %.6f dB (48.131 +- 1e-3), ms_ssim(x,x) = %.17g, 5 pairs worst |delta| %.2e (< 1e-6)", p, self,
              worst)};
}

void report(const char* id, const char* name, const std::function<Outcome()>& fn, int* failures) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  if (failures && !o.pass) ++*failures;
  std::printf("[%s] %-3s %s: %s [%.1f s]%s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
              seconds_since(t0), failures ? "" : " (informational)");
  std::fflush(stdout);
}

}  // namespace

int main() {
  int failures = 0;
  report("1", "gradient suite", gradient_suite, &failures);
  report("2", "zero-init identity", zero_identity, &failures);
  report("3", "entropy coder exactness", entropy_exactness, &failures);
  report("4", "rate estimate consistency", rate_estimate, &failures);
  report("5", "codec determinism", codec_determinism, &failures);
  report("6", "cost model", cost_model, &failures);

  OverfitRun run;
  report("7", "overfit smoke test", [&] {
    run = overfit_run();
    return overfit(run);
  }, &failures);
  report("8", "ERF ordering", erf_ordering, &failures);
  report("8b", "ERF ordering, spatial path", erf_spatial_path, nullptr);
  report("9", "BD-rate analytics", bd_analytics, &failures);
  report("10", "metric sanity", metric_sanity, &failures);
  report("11", "training reproducibility", [&] {
    if (run.final_ckpt.empty()) return Outcome{false, "criterion 7 run did not complete"};
    return reproducibility(run);
  }, &failures);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures;
}
