#include <doctest.h>

#include "llic/blocks.hpp"
#include "llic/gradcheck.hpp"
#include "llic/ops.hpp"
#include "support.hpp"

using namespace llic;
using llic::test::max_abs_diff;
using llic::test::param;
using llic::test::random_tensor;

namespace {

BlockConfig cfg(std::size_t c, std::size_t k) {
  BlockConfig b;
  b.channels = c;
  b.kernel = k;
  return b;
}

// Swaps the batch samples of a 2-sample tensor.
Tensor swap_batch(const Tensor& x) {
  const std::size_t per = x.numel() / 2;
  std::vector<double> v(x.numel());
  std::copy(x.data().begin() + per, x.data().end(), v.begin());
  std::copy(x.data().begin(), x.data().begin() + per, v.begin() + per);
  return Tensor(x.shape(), v);
}

}  // namespace

TEST_CASE("zero parameters make every residual block the identity") {
  const Tensor x = random_tensor({2, 8, 9, 7}, 1);
  Rng rng(1);
  ParamSet ps;
  DepthRB rb(ps, "rb", 8, rng);
  GateBlock gate(ps, "gate", 8, 2, rng);
  FfnBlock ffn(ps, "ffn", 8, 2, rng);
  TransformBlock stb(ps, "stb", TransformKind::spatial, cfg(8, 5), rng);
  TransformBlock ctb(ps, "ctb", TransformKind::channel, cfg(8, 5), rng);
  BasicBlock fwd(ps, "fwd", cfg(8, 5), Direction::forward, rng);
  BasicBlock inv(ps, "inv", cfg(8, 5), Direction::inverse, rng);
  ps.fill(0.0);
  CHECK(test::bitwise_equal(rb.forward(x), x));
  CHECK(test::bitwise_equal(gate.forward(x), x));
  CHECK(test::bitwise_equal(ffn.forward(x), x));
  CHECK(test::bitwise_equal(stb.forward(x), x));
  CHECK(test::bitwise_equal(ctb.forward(x), x));
  CHECK(test::bitwise_equal(fwd.forward(x), x));
  CHECK(test::bitwise_equal(inv.forward(x), x));
}

TEST_CASE("blocks preserve shape") {
  Rng rng(2);
  ParamSet ps;
  const Tensor x = random_tensor({2, 8, 16, 16}, 2);
  CHECK(DepthRB(ps, "rb", 8, rng).forward(x).shape() == x.shape());
  CHECK(GateBlock(ps, "g", 8, 2, rng).forward(x).shape() == x.shape());
  for (std::size_t k : {9u, 11u}) {
    CHECK(Scst(ps, "scst" + std::to_string(k), cfg(8, k), rng).forward(x).shape() == x.shape());
  }
  CHECK(Scct(ps, "scct", cfg(8, 3), rng).forward(x).shape() == x.shape());
  CHECK(TransformBlock(ps, "ctb", TransformKind::channel, cfg(8, 3), rng).forward(x).shape() == x.shape());
}

TEST_CASE("STB keeps full-width shape") {
  Rng rng(3);
  ParamSet ps;
  const Tensor x = random_tensor({1, 192, 32, 32}, 3);
  NoGradGuard no_grad;
  CHECK(TransformBlock(ps, "stb", TransformKind::spatial, cfg(192, 11), rng).forward(x).shape() == x.shape());
}

TEST_CASE("block gradients match finite differences") {
  Rng rng(4);
  ParamSet ps;
  const Tensor x = random_tensor({1, 4, 6, 6}, 4);
  const Tensor x8 = random_tensor({1, 4, 8, 8}, 5);
  DepthRB rb(ps, "rb", 4, rng);
  GateBlock gate(ps, "gate", 4, 2, rng);
  FfnBlock ffn(ps, "ffn", 4, 2, rng);
  Scst scst(ps, "scst", cfg(4, 3), rng);
  Scct scct(ps, "scct", cfg(4, 3), rng);
  TransformBlock stb(ps, "stb", TransformKind::spatial, cfg(4, 3), rng);
  TransformBlock ctb(ps, "ctb", TransformKind::channel, cfg(4, 3), rng);
  BasicBlock basic(ps, "basic", cfg(4, 3), Direction::inverse, rng);
  DownsampleBlock down(ps, "down", 3, 4, rng);
  UpsampleBlock up(ps, "up", 4, 3, rng);
  test::randomize(ps, 44, 0.4);

  CHECK(grad_check([&](const Tensor& t) { return rb.forward(t); }, x) < 1e-5);
  CHECK(grad_check([&](const Tensor& t) { return gate.forward(t); }, x) < 1e-5);
  CHECK(grad_check([&](const Tensor& t) { return ffn.forward(t); }, x) < 1e-5);
  CHECK(grad_check([&](const Tensor& t) { return scst.forward(t); }, x) < 1e-5);
  CHECK(grad_check([&](const Tensor& t) { return scct.forward(t); }, x) < 1e-5);
  CHECK(grad_check([&](const Tensor& t) { return stb.forward(t); }, x8) < 1e-5);
  CHECK(grad_check([&](const Tensor& t) { return ctb.forward(t); }, x8) < 1e-5);
  CHECK(grad_check([&](const Tensor& t) { return basic.forward(t); }, x8) < 1e-5);
  CHECK(grad_check([&](const Tensor& t) { return down.forward(t); }, random_tensor({1, 3, 8, 8}, 6)) < 1e-5);
  CHECK(grad_check([&](const Tensor& t) { return up.forward(t); }, random_tensor({1, 4, 3, 3}, 7)) < 1e-5);

  for (const char* name : {"scct.condition.summarize.weight", "scct.condition.reduce.weight",
                           "scct.condition.reduce.bias", "scst.condition.reduce.weight"}) {
    CAPTURE(name);
    const bool is_scst = std::string(name).starts_with("scst");
    CHECK(test::param_grad_check(param(ps, name), [&] { return is_scst ? scst.forward(x) : scct.forward(x); }) <
          1e-5);
  }
}

TEST_CASE("SCST: zero condition output gives zero kernels and zero output") {
  Rng rng(5);
  ParamSet ps;
  Scst scst(ps, "s", cfg(4, 5), rng);
  for (double& v : param(ps, "s.condition.reduce.weight").data()) v = 0.0;
  for (double& v : param(ps, "s.condition.reduce.bias").data()) v = 0.0;
  for (double v : test::values(scst.forward(random_tensor({2, 4, 6, 6}, 5)))) CHECK(v == 0.0);
}

TEST_CASE("SCST: static mode equals dynamic mode emitting the same kernels") {
  Rng rng(6);
  ParamSet ps;
  BlockConfig dyn_cfg = cfg(4, 5), static_cfg = cfg(4, 5);
  static_cfg.switches.static_weights = true;
  Scst dynamic(ps, "d", dyn_cfg, rng);
  Scst fixed(ps, "s", static_cfg, rng);
  const Tensor w = param(ps, "s.kernel");
  for (double& v : param(ps, "d.condition.reduce.weight").data()) v = 0.0;
  auto bias = param(ps, "d.condition.reduce.bias").data();
  std::copy(w.data().begin(), w.data().end(), bias.begin());
  auto dm = param(ps, "d.main.weight").data(), sm = param(ps, "s.main.weight").data();
  std::copy(sm.begin(), sm.end(), dm.begin());
  auto db = param(ps, "d.main.bias").data(), sb = param(ps, "s.main.bias").data();
  std::copy(sb.begin(), sb.end(), db.begin());

  const Tensor x = random_tensor({3, 4, 7, 7}, 6);
  CHECK(max_abs_diff(dynamic.forward(x), fixed.forward(x)) < 1e-12);
  CHECK(ps.find("s.condition.reduce.weight") == nullptr);
}

TEST_CASE("SCCT: forced factors") {
  Rng rng(7);
  ParamSet ps;
  Scct scct(ps, "c", cfg(4, 3), rng);
  const Tensor x = random_tensor({2, 4, 5, 5}, 7);
  for (double& v : param(ps, "c.condition.reduce.weight").data()) v = 0.0;
  for (double& v : param(ps, "c.condition.reduce.bias").data()) v = 1.0;
  const Tensor main = conv2d(x, ConvSpec::same(4, 4, 1), param(ps, "c.main.weight"), param(ps, "c.main.bias"));
  CHECK(test::bitwise_equal(scct.forward(x), main));
  for (double& v : param(ps, "c.condition.reduce.bias").data()) v = 0.0;
  for (double v : test::values(scct.forward(x))) CHECK(v == 0.0);
}

TEST_CASE("condition branches need at least 3x3 inputs") {
  Rng rng(8);
  ParamSet ps;
  CHECK_THROWS_AS(Scst(ps, "s", cfg(2, 3), rng).forward(Tensor({1, 2, 2, 5})), ShapeError);
  CHECK_THROWS_AS(Scct(ps, "c", cfg(2, 3), rng).forward(Tensor({1, 2, 5, 2})), ShapeError);
}

TEST_CASE("block config validation") {
  CHECK_THROWS_AS(cfg(4, 4).validate(), ShapeError);
  BlockConfig odd = cfg(3, 3);
  odd.gate_expansion = 1;
  CHECK_THROWS_AS(odd.validate(), ShapeError);
}

TEST_CASE("basic block ordering") {
  BlockConfig c = cfg(4, 3);
  using K = TransformKind;
  CHECK(block_order(c, Direction::forward) == std::vector{K::spatial, K::channel});
  CHECK(block_order(c, Direction::inverse) == std::vector{K::channel, K::spatial});
  c.switches.swap_stb_ctb = true;
  CHECK(block_order(c, Direction::forward) == std::vector{K::channel, K::spatial});
  c = cfg(4, 3);
  c.switches.disable_ctb = true;
  CHECK(block_order(c, Direction::forward) == std::vector{K::spatial});
  c = cfg(4, 3);
  c.layout = PairLayout::channel_channel;
  CHECK(block_order(c, Direction::inverse) == std::vector{K::channel, K::channel});
}

TEST_CASE("forward block with CTB disabled equals its STB") {
  BlockConfig c = cfg(4, 3);
  c.switches.disable_ctb = true;
  Rng r1(9), r2(9);
  ParamSet p1, p2;
  BasicBlock basic(p1, "b", c, Direction::forward, r1);
  TransformBlock stb(p2, "b.stb0", TransformKind::spatial, c, r2);
  const Tensor x = random_tensor({1, 4, 6, 6}, 9);
  CHECK(test::bitwise_equal(basic.forward(x), stb.forward(x)));
}

TEST_CASE("inverse order differs from forward order") {
  ParamSet ps;
  Rng rng(10);
  TransformBlock stb(ps, "stb", TransformKind::spatial, cfg(4, 3), rng);
  TransformBlock ctb(ps, "ctb", TransformKind::channel, cfg(4, 3), rng);
  test::randomize(ps, 10, 0.5);
  const Tensor x = random_tensor({1, 4, 6, 6}, 10);
  CHECK(max_abs_diff(ctb.forward(stb.forward(x)), stb.forward(ctb.forward(x))) > 1e-6);
}

TEST_CASE("ablation switches build the substitute blocks") {
  BlockConfig c = cfg(4, 3);
  c.switches.linear_embedding = true;
  c.switches.use_ffn_instead_of_gate = true;
  Rng rng(11);
  ParamSet ps;
  TransformBlock b(ps, "b", TransformKind::spatial, c, rng);
  CHECK(ps.find("b.embed.weight") != nullptr);
  CHECK(ps.find("b.embed.expand.weight") == nullptr);
  CHECK(ps.find("b.ffn.expand.weight") != nullptr);
  CHECK(ps.find("b.gate.expand.weight") == nullptr);
  CHECK(grad_check([&](const Tensor& t) { return b.forward(t); }, random_tensor({1, 4, 6, 6}, 11)) < 1e-5);
}

TEST_CASE("down and up sampling shapes") {
  Rng rng(12);
  ParamSet ps;
  NoGradGuard no_grad;
  DownsampleBlock down(ps, "down", 3, 192, rng);
  const Tensor d = down.forward(random_tensor({1, 3, 64, 64}, 12));
  CHECK(d.shape() == Shape{1, 192, 32, 32});
  UpsampleBlock up(ps, "up", 192, 3, rng);
  CHECK(up.forward(d).shape() == Shape{1, 3, 64, 64});
  CHECK_THROWS_AS(down.forward(Tensor({1, 3, 7, 8})), ShapeError);
}

TEST_CASE("samples are processed independently") {
  Rng rng(13);
  ParamSet ps;
  BasicBlock b(ps, "b", cfg(4, 5), Direction::forward, rng);
  test::randomize(ps, 13, 0.4);
  const Tensor x = random_tensor({2, 4, 7, 7}, 13);
  CHECK(test::bitwise_equal(b.forward(swap_batch(x)), swap_batch(b.forward(x))));
}

TEST_CASE("gate is cheaper than FFN for every width") {
  CHECK(gate_macs_per_pixel(192) == 110784u);
  CHECK(ffn_macs_per_pixel(192) == 147840u);
  for (std::uint64_t c = 1; c <= 1024; ++c) {
    CHECK(gate_macs_per_pixel(c) == 3 * c * c + c);
    CHECK(gate_macs_per_pixel(c) < ffn_macs_per_pixel(c));
  }
}

TEST_CASE("holding the condition path detaches generated weights") {
  Rng rng(14);
  ParamSet ps;
  Scst scst(ps, "s", cfg(4, 3), rng);
  const Tensor x = random_tensor({1, 4, 6, 6}, 14);
  {
    HoldConditionGuard hold;
    CHECK(condition_held());
    backward(sum(scst.forward(x)));
  }
  CHECK_FALSE(condition_held());
  const Tensor w = param(ps, "s.condition.reduce.weight");
  CHECK((!w.has_grad() || std::all_of(w.grad().begin(), w.grad().end(), [](double g) { return g == 0.0; })));
  CHECK(param(ps, "s.main.weight").has_grad());
}
