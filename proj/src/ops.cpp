#include "llic/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace llic {

namespace {

using detail::Node;

const char* kind_name(ElementwiseKind k) {
  switch (k) {
    case ElementwiseKind::add: return "add";
    case ElementwiseKind::sub: return "sub";
    case ElementwiseKind::mul: return "mul";
    case ElementwiseKind::div: return "div";
    case ElementwiseKind::scale: return "scale";
    case ElementwiseKind::neg: return "neg";
    case ElementwiseKind::exp: return "exp";
    case ElementwiseKind::log: return "log";
    case ElementwiseKind::tanh: return "tanh";
    case ElementwiseKind::sqrt: return "sqrt";
    case ElementwiseKind::abs: return "abs";
    case ElementwiseKind::clamp: return "clamp";
  }
  return "?";
}

// Accumulates g into t's gradient (if t participates in the graph).
void accumulate(const Tensor& t, const std::vector<double>& g) {
  if (!detail::wants_grad(t)) return;
  auto& node = *t.node();
  node.ensure_grad();
  if (node.grad.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
  } else {
    // Scalar operand broadcast over the other tensor.
    double s = 0.0;
    for (double v : g) s += v;
    node.grad[0] += s;
  }
}

double safe_denominator(double b, bool clamp_domain) {
  if (std::abs(b) >= kDomainFloor) return b;
  if (!clamp_domain) throw DomainError("division by a value below the domain floor");
  return b < 0 ? -kDomainFloor : kDomainFloor;
}

Tensor binary(ElementwiseKind kind, const Tensor& a, const Tensor& b, bool clamp_domain) {
  const std::size_t na = a.numel();
  const std::size_t nb = b.numel();
  if (na != nb && nb != 1) {
    throw ShapeError(std::string(kind_name(kind)) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  if (na == nb && a.shape() != b.shape()) {
    throw ShapeError(std::string(kind_name(kind)) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  auto av = a.data();
  auto bv = b.data();
  const bool bcast = nb == 1 && na != 1;
  auto bat = [&](std::size_t i) { return bcast ? bv[0] : bv[i]; };
  std::vector<double> out(na);
  switch (kind) {
    case ElementwiseKind::add:
      for (std::size_t i = 0; i < na; ++i) out[i] = av[i] + bat(i);
      break;
    case ElementwiseKind::sub:
      for (std::size_t i = 0; i < na; ++i) out[i] = av[i] - bat(i);
      break;
    case ElementwiseKind::mul:
      for (std::size_t i = 0; i < na; ++i) out[i] = av[i] * bat(i);
      break;
    case ElementwiseKind::div:
      for (std::size_t i = 0; i < na; ++i) out[i] = av[i] / safe_denominator(bat(i), clamp_domain);
      break;
    default:
      throw ShapeError(std::string("not a binary kind: ") + kind_name(kind));
  }
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [a, b, kind, bcast, clamp_domain](Node& self) {
    const auto& g = self.grad;
    const std::size_t n = g.size();
    auto av = a.data();
    auto bv = b.data();
    auto bat = [&](std::size_t i) { return bcast ? bv[0] : bv[i]; };
    std::vector<double> ga, gb;
    const bool need_a = detail::wants_grad(a);
    const bool need_b = detail::wants_grad(b);
    if (need_a) ga.resize(n);
    if (need_b) gb.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      switch (kind) {
        case ElementwiseKind::add:
          if (need_a) ga[i] = g[i];
          if (need_b) gb[i] = g[i];
          break;
        case ElementwiseKind::sub:
          if (need_a) ga[i] = g[i];
          if (need_b) gb[i] = -g[i];
          break;
        case ElementwiseKind::mul:
          if (need_a) ga[i] = g[i] * bat(i);
          if (need_b) gb[i] = g[i] * av[i];
          break;
        case ElementwiseKind::div: {
          const double raw = bat(i);
          const double d = safe_denominator(raw, clamp_domain);
          if (need_a) ga[i] = g[i] / d;
          if (need_b) gb[i] = (d == raw) ? -g[i] * av[i] / (d * d) : 0.0;
          break;
        }
        default:
          break;
      }
    }
    if (need_a) accumulate(a, ga);
    if (need_b) accumulate(b, gb);
  });
}

Tensor unary(ElementwiseKind kind, const Tensor& a, double param, bool clamp_domain) {
  auto av = a.data();
  const std::size_t n = av.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[i];
    switch (kind) {
      case ElementwiseKind::scale: out[i] = x * param; break;
      case ElementwiseKind::neg: out[i] = -x; break;
      case ElementwiseKind::exp: out[i] = std::exp(x); break;
      case ElementwiseKind::log:
        if (x < kDomainFloor && !clamp_domain) throw DomainError("log of value below the domain floor");
        out[i] = std::log(std::max(x, kDomainFloor));
        break;
      case ElementwiseKind::tanh: out[i] = std::tanh(x); break;
      case ElementwiseKind::sqrt:
        if (x < 0 && !clamp_domain) throw DomainError("sqrt of negative value");
        out[i] = std::sqrt(std::max(x, kDomainFloor));
        break;
      case ElementwiseKind::abs: out[i] = std::abs(x); break;
      case ElementwiseKind::clamp: out[i] = std::max(x, param); break;
      default: throw ShapeError(std::string("not a unary kind: ") + kind_name(kind));
    }
  }
  return detail::make_result(a.shape(), out, {&a}, [a, kind, param, out](Node& self) {
    const auto& g = self.grad;
    auto av = a.data();
    std::vector<double> ga(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i];
      double d = 0.0;
      switch (kind) {
        case ElementwiseKind::scale: d = param; break;
        case ElementwiseKind::neg: d = -1.0; break;
        case ElementwiseKind::exp: d = out[i]; break;
        case ElementwiseKind::log: d = x >= kDomainFloor ? 1.0 / x : 0.0; break;
        case ElementwiseKind::tanh: d = 1.0 - out[i] * out[i]; break;
        case ElementwiseKind::sqrt: d = x >= kDomainFloor ? 0.5 / out[i] : 0.0; break;
        case ElementwiseKind::abs: d = x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); break;
        case ElementwiseKind::clamp: d = x >= param ? 1.0 : 0.0; break;
        default: break;
      }
      ga[i] = g[i] * d;
    }
    accumulate(a, ga);
  });
}

bool is_binary(ElementwiseKind k) {
  return k == ElementwiseKind::add || k == ElementwiseKind::sub || k == ElementwiseKind::mul ||
         k == ElementwiseKind::div;
}

}  // namespace

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b, bool clamp_domain) {
  if (is_binary(kind)) return binary(kind, a, b, clamp_domain);
  if (kind == ElementwiseKind::scale || kind == ElementwiseKind::clamp) {
    if (b.numel() != 1) throw ShapeError(std::string(kind_name(kind)) + " expects a scalar operand");
    return unary(kind, a, b.item(), clamp_domain);
  }
  return unary(kind, a, 0.0, clamp_domain);
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b, bool clamp_domain) {
  if (is_binary(kind)) return binary(kind, a, Tensor::scalar(b), clamp_domain);
  return unary(kind, a, b, clamp_domain);
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(ElementwiseKind::add, a, b, true); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(ElementwiseKind::sub, a, b, true); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(ElementwiseKind::mul, a, b, true); }
Tensor div(const Tensor& a, const Tensor& b, bool clamp_domain) {
  return binary(ElementwiseKind::div, a, b, clamp_domain);
}
Tensor scale(const Tensor& a, double s) { return unary(ElementwiseKind::scale, a, s, true); }
Tensor neg(const Tensor& a) { return unary(ElementwiseKind::neg, a, 0.0, true); }
Tensor exp(const Tensor& a) { return unary(ElementwiseKind::exp, a, 0.0, true); }
Tensor log(const Tensor& a, bool clamp_domain) { return unary(ElementwiseKind::log, a, 0.0, clamp_domain); }
Tensor tanh(const Tensor& a) { return unary(ElementwiseKind::tanh, a, 0.0, true); }
Tensor sqrt(const Tensor& a, bool clamp_domain) { return unary(ElementwiseKind::sqrt, a, 0.0, clamp_domain); }
Tensor abs(const Tensor& a) { return unary(ElementwiseKind::abs, a, 0.0, true); }

Tensor add_scalar(const Tensor& a, double s) { return binary(ElementwiseKind::add, a, Tensor::scalar(s), true); }

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lower bound exceeds upper bound");
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::clamp(av[i], lo, hi);
  return detail::make_result(a.shape(), std::move(out), {&a}, [a, lo, hi](Node& self) {
    auto av = a.data();
    std::vector<double> ga(self.grad.size());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] = (av[i] >= lo && av[i] <= hi) ? self.grad[i] : 0.0;
    }
    accumulate(a, ga);
  });
}

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor pow_nonneg(const Tensor& a, double p) {
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0 ? std::pow(av[i], p) : 0.0;
  return detail::make_result(a.shape(), out, {&a}, [a, p, out](Node& self) {
    auto av = a.data();
    std::vector<double> ga(self.grad.size());
    for (std::size_t i = 0; i < ga.size(); ++i) {
      ga[i] = av[i] > 0 ? self.grad[i] * p * out[i] / av[i] : 0.0;
    }
    accumulate(a, ga);
  });
}

Tensor reduce(ReduceKind kind, const Tensor& a, std::vector<std::size_t> axes) {
  const Shape& in = a.shape();
  const std::size_t rank = in.size();
  if (axes.empty()) {
    for (std::size_t i = 0; i < rank; ++i) axes.push_back(i);
  }
  std::vector<bool> reduced(rank, false);
  for (std::size_t ax : axes) {
    if (ax >= rank) throw ShapeError("reduce: invalid axis " + std::to_string(ax) + " for shape " + shape_str(in));
    reduced[ax] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i]) {
      count *= in[i];
    } else {
      out_shape.push_back(in[i]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Map each input flat index to its output flat index.
  const std::size_t n = a.numel();
  std::vector<std::size_t> target(n);
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < n; ++flat) {
      std::size_t o = 0;
      for (std::size_t d = 0; d < rank; ++d) {
        if (!reduced[d]) o = o * in[d] + idx[d];
      }
      target[flat] = o;
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < in[d]) break;
        idx[d] = 0;
      }
    }
  }
  const double factor = kind == ReduceKind::mean ? 1.0 / static_cast<double>(count) : 1.0;
  std::vector<double> out(shape_numel(out_shape), 0.0);
  auto av = a.data();
  for (std::size_t i = 0; i < n; ++i) out[target[i]] += av[i];
  if (factor != 1.0) {
    for (double& v : out) v *= factor;
  }
  return detail::make_result(out_shape, std::move(out), {&a}, [a, target = std::move(target), factor](Node& self) {
    std::vector<double> ga(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) ga[i] = self.grad[target[i]] * factor;
    accumulate(a, ga);
  });
}

Tensor sum(const Tensor& a) { return reduce(ReduceKind::sum, a); }
Tensor mean(const Tensor& a) { return reduce(ReduceKind::mean, a); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> values(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(values), {&a}, [a](Node& self) { accumulate(a, self.grad); });
}

Tensor with_values(const Tensor& a, std::vector<double> values) {
  if (values.size() != a.numel()) throw ShapeError("with_values: element count mismatch");
  return detail::make_result(a.shape(), std::move(values), {&a}, [a](Node& self) { accumulate(a, self.grad); });
}

Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

}  // namespace llic
