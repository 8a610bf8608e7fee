#include "llic/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace llic {

namespace {

using detail::Node;

thread_local MacsRecorder* g_recorder = nullptr;

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw ShapeError(std::string(what) + ": expected NCHW tensor, got " + shape_str(t.shape()));
}

// Valid output range [lo, hi) for one kernel tap along an axis.
struct TapRange {
  std::size_t lo, hi;
};

TapRange tap_range(std::size_t out_extent, std::size_t in_extent, std::size_t stride, std::size_t pad,
                   std::size_t tap) {
  // in = out*stride + tap - pad must lie in [0, in_extent).
  const long long p = static_cast<long long>(pad), k = static_cast<long long>(tap);
  const long long s = static_cast<long long>(stride);
  long long lo = 0;
  if (p > k) lo = (p - k + s - 1) / s;
  long long hi = (static_cast<long long>(in_extent) - 1 + p - k);
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<long long>(hi, static_cast<long long>(out_extent));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct PlaneGeom {
  std::size_t h, w, oh, ow, k, stride, pad;
};

// out += in (*) kernel for one (input plane, output plane) pair.
void plane_forward(const double* in, const double* kernel, double* out, const PlaneGeom& g) {
  for (std::size_t ky = 0; ky < g.k; ++ky) {
    const TapRange ry = tap_range(g.oh, g.h, g.stride, g.pad, ky);
    for (std::size_t kx = 0; kx < g.k; ++kx) {
      const double wv = kernel[ky * g.k + kx];
      if (wv == 0.0) continue;
      const TapRange rx = tap_range(g.ow, g.w, g.stride, g.pad, kx);
      for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
        const double* irow = in + (oy * g.stride + ky - g.pad) * g.w;
        double* orow = out + oy * g.ow;
        if (g.stride == 1) {
          const double* src = irow + kx - g.pad;
          for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wv * src[ox];
        } else {
          for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
        }
      }
    }
  }
}

// gin += gout (*)^T kernel
void plane_backward_input(const double* gout, const double* kernel, double* gin, const PlaneGeom& g) {
  for (std::size_t ky = 0; ky < g.k; ++ky) {
    const TapRange ry = tap_range(g.oh, g.h, g.stride, g.pad, ky);
    for (std::size_t kx = 0; kx < g.k; ++kx) {
      const double wv = kernel[ky * g.k + kx];
      if (wv == 0.0) continue;
      const TapRange rx = tap_range(g.ow, g.w, g.stride, g.pad, kx);
      for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
        double* irow = gin + (oy * g.stride + ky - g.pad) * g.w;
        const double* orow = gout + oy * g.ow;
        if (g.stride == 1) {
          double* dst = irow + kx - g.pad;
          for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) dst[ox] += wv * orow[ox];
        } else {
          for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) irow[ox * g.stride + kx - g.pad] += wv * orow[ox];
        }
      }
    }
  }
}

// gkernel += correlation of gout with in
void plane_backward_kernel(const double* in, const double* gout, double* gkernel, const PlaneGeom& g) {
  for (std::size_t ky = 0; ky < g.k; ++ky) {
    const TapRange ry = tap_range(g.oh, g.h, g.stride, g.pad, ky);
    for (std::size_t kx = 0; kx < g.k; ++kx) {
      const TapRange rx = tap_range(g.ow, g.w, g.stride, g.pad, kx);
      double acc = 0.0;
      for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
        const double* irow = in + (oy * g.stride + ky - g.pad) * g.w;
        const double* orow = gout + oy * g.ow;
        if (g.stride == 1) {
          const double* src = irow + kx - g.pad;
          for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) acc += orow[ox] * src[ox];
        } else {
          for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) acc += orow[ox] * irow[ox * g.stride + kx - g.pad];
        }
      }
      gkernel[ky * g.k + kx] += acc;
    }
  }
}

// Dense 1x1 stride-1 convolution: out[oc] += sum_ic w[oc, ic] * in[ic] over whole planes.
void pointwise_forward(const double* in, const double* w, double* out, std::size_t cin, std::size_t cout,
                       std::size_t hw) {
  for (std::size_t oc = 0; oc < cout; ++oc) {
    double* o = out + oc * hw;
    for (std::size_t ic = 0; ic < cin; ++ic) {
      const double wv = w[oc * cin + ic];
      if (wv == 0.0) continue;
      const double* i = in + ic * hw;
      for (std::size_t p = 0; p < hw; ++p) o[p] += wv * i[p];
    }
  }
}

}  // namespace

std::size_t ConvSpec::output_extent(std::size_t in) const {
  const long long span = static_cast<long long>(in) + 2 * static_cast<long long>(padding) -
                         static_cast<long long>(kernel);
  if (span < 0) return 0;
  return static_cast<std::size_t>(span) / stride + 1;
}

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 || groups == 0) {
    throw ShapeError("conv spec: extents must be positive");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ShapeError("conv spec: channels not divisible by groups");
  }
}

Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weight, const Tensor& bias) {
  spec.validate();
  require_rank4(input, "conv2d");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (cin != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight shape " + shape_str(weight.shape()) + " != " + shape_str(spec.weight_shape()));
  }
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()));
  }
  const std::size_t oh = spec.output_extent(h), ow = spec.output_extent(w);
  if (oh == 0 || ow == 0) throw ShapeError("conv2d: zero-size output for input " + shape_str(input.shape()));

  const std::size_t cout = spec.out_channels, groups = spec.groups;
  const std::size_t cin_g = cin / groups, cout_g = cout / groups, k = spec.kernel;
  const PlaneGeom geom{h, w, oh, ow, k, spec.stride, spec.padding};
  const bool pointwise = k == 1 && spec.stride == 1 && spec.padding == 0;
  const std::size_t in_plane = h * w, out_plane = oh * ow, ksz = k * k;

  std::vector<double> out(n * cout * out_plane, 0.0);
  const double* x = input.data().data();
  const double* wt = weight.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      const double* xin = x + (b * cin + g * cin_g) * in_plane;
      double* yout = out.data() + (b * cout + g * cout_g) * out_plane;
      if (bias.defined()) {
        auto bv = bias.data();
        for (std::size_t oc = 0; oc < cout_g; ++oc) {
          std::fill_n(yout + oc * out_plane, out_plane, bv[g * cout_g + oc]);
        }
      }
      if (pointwise) {
        pointwise_forward(xin, wt + g * cout_g * cin_g, yout, cin_g, cout_g, in_plane);
        continue;
      }
      for (std::size_t oc = 0; oc < cout_g; ++oc) {
        for (std::size_t ic = 0; ic < cin_g; ++ic) {
          plane_forward(xin + ic * in_plane, wt + ((g * cout_g + oc) * cin_g + ic) * ksz, yout + oc * out_plane, geom);
        }
      }
    }
  }
  Shape out_shape{n, cout, oh, ow};
  if (g_recorder) MacsRecorder::note("conv2d", ksz * cin_g * cout * out_plane * n, out_shape);

  return detail::make_result(out_shape, std::move(out), {&input, &weight, &bias},
                             [input, weight, bias, spec, geom, pointwise](Node& self) {
    const std::size_t n = input.dim(0), cin = input.dim(1);
    const std::size_t cout = spec.out_channels, groups = spec.groups;
    const std::size_t cin_g = cin / groups, cout_g = cout / groups, ksz = spec.kernel * spec.kernel;
    const std::size_t in_plane = geom.h * geom.w, out_plane = geom.oh * geom.ow;
    const double* gy = self.grad.data();
    const double* x = input.data().data();
    const double* wt = weight.data().data();

    if (detail::wants_grad(bias)) {
      std::vector<double> gb(cout, 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oc = 0; oc < cout; ++oc) {
          const double* p = gy + (b * cout + oc) * out_plane;
          double acc = 0.0;
          for (std::size_t i = 0; i < out_plane; ++i) acc += p[i];
          gb[oc] += acc;
        }
      }
      detail::accumulate_grad(bias, gb);
    }
    if (detail::wants_grad(weight)) {
      std::vector<double> gw(weight.numel(), 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t g = 0; g < groups; ++g) {
          const double* xin = x + (b * cin + g * cin_g) * in_plane;
          const double* gout = gy + (b * cout + g * cout_g) * out_plane;
          for (std::size_t oc = 0; oc < cout_g; ++oc) {
            for (std::size_t ic = 0; ic < cin_g; ++ic) {
              double* gk = gw.data() + ((g * cout_g + oc) * cin_g + ic) * ksz;
              if (pointwise) {
                const double* a = gout + oc * out_plane;
                const double* c = xin + ic * in_plane;
                double acc = 0.0;
                for (std::size_t p = 0; p < in_plane; ++p) acc += a[p] * c[p];
                gk[0] += acc;
              } else {
                plane_backward_kernel(xin + ic * in_plane, gout + oc * out_plane, gk, geom);
              }
            }
          }
        }
      }
      detail::accumulate_grad(weight, gw);
    }
    if (detail::wants_grad(input)) {
      std::vector<double> gx(input.numel(), 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t g = 0; g < groups; ++g) {
          double* gin = gx.data() + (b * cin + g * cin_g) * in_plane;
          const double* gout = gy + (b * cout + g * cout_g) * out_plane;
          for (std::size_t ic = 0; ic < cin_g; ++ic) {
            for (std::size_t oc = 0; oc < cout_g; ++oc) {
              const double* kern = wt + ((g * cout_g + oc) * cin_g + ic) * ksz;
              if (pointwise) {
                const double wv = kern[0];
                if (wv == 0.0) continue;
                double* dst = gin + ic * in_plane;
                const double* src = gout + oc * out_plane;
                for (std::size_t p = 0; p < in_plane; ++p) dst[p] += wv * src[p];
              } else {
                plane_backward_input(gout + oc * out_plane, kern, gin + ic * in_plane, geom);
              }
            }
          }
        }
      }
      detail::accumulate_grad(input, gx);
    }
  });
}

Tensor conv2d_dynamic_depthwise(const Tensor& input, const Tensor& kernels) {
  require_rank4(input, "conv2d_dynamic_depthwise");
  require_rank4(kernels, "conv2d_dynamic_depthwise kernels");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = kernels.dim(2);
  if (kernels.dim(3) != k) throw ShapeError("conv2d_dynamic_depthwise: kernels must be square");
  if (k % 2 == 0) throw ShapeError("conv2d_dynamic_depthwise: kernel size must be odd, got " + std::to_string(k));
  if (kernels.dim(0) != n || kernels.dim(1) != c) {
    throw ShapeError("conv2d_dynamic_depthwise: kernels " + shape_str(kernels.shape()) + " do not match input " +
                     shape_str(input.shape()));
  }
  const PlaneGeom geom{h, w, h, w, k, 1, k / 2};
  const std::size_t plane = h * w, ksz = k * k;
  std::vector<double> out(input.numel(), 0.0);
  const double* x = input.data().data();
  const double* kv = kernels.data().data();
  for (std::size_t p = 0; p < n * c; ++p) plane_forward(x + p * plane, kv + p * ksz, out.data() + p * plane, geom);
  if (g_recorder) MacsRecorder::note("dynamic_depthwise", ksz * n * c * plane, input.shape());

  return detail::make_result(input.shape(), std::move(out), {&input, &kernels}, [input, kernels, geom](Node& self) {
    const std::size_t planes = input.dim(0) * input.dim(1);
    const std::size_t plane = geom.h * geom.w, ksz = geom.k * geom.k;
    const double* gy = self.grad.data();
    if (detail::wants_grad(kernels)) {
      std::vector<double> gk(kernels.numel(), 0.0);
      const double* x = input.data().data();
      for (std::size_t p = 0; p < planes; ++p) {
        plane_backward_kernel(x + p * plane, gy + p * plane, gk.data() + p * ksz, geom);
      }
      detail::accumulate_grad(kernels, gk);
    }
    if (detail::wants_grad(input)) {
      std::vector<double> gx(input.numel(), 0.0);
      const double* kv = kernels.data().data();
      for (std::size_t p = 0; p < planes; ++p) {
        plane_backward_input(gy + p * plane, kv + p * ksz, gx.data() + p * plane, geom);
      }
      detail::accumulate_grad(input, gx);
    }
  });
}

Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_rank4(input, "adaptive_avg_pool");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < out_h || w < out_w) {
    throw ShapeError("adaptive_avg_pool: input " + shape_str(input.shape()) + " smaller than output " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  auto bin = [](std::size_t i, std::size_t extent, std::size_t out) { return i * extent / out; };
  std::vector<double> out(n * c * out_h * out_w);
  const double* x = input.data().data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* plane = x + p * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t y0 = bin(i, h, out_h), y1 = bin(i + 1, h, out_h);
      for (std::size_t j = 0; j < out_w; ++j) {
        const std::size_t x0 = bin(j, w, out_w), x1 = bin(j + 1, w, out_w);
        double acc = 0.0;
        for (std::size_t y = y0; y < y1; ++y) {
          for (std::size_t xx = x0; xx < x1; ++xx) acc += plane[y * w + xx];
        }
        out[(p * out_h + i) * out_w + j] = acc / static_cast<double>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return detail::make_result({n, c, out_h, out_w}, std::move(out), {&input}, [input, out_h, out_w, bin](Node& self) {
    const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
    std::vector<double> gx(input.numel(), 0.0);
    for (std::size_t p = 0; p < planes; ++p) {
      double* plane = gx.data() + p * h * w;
      for (std::size_t i = 0; i < out_h; ++i) {
        const std::size_t y0 = bin(i, h, out_h), y1 = bin(i + 1, h, out_h);
        for (std::size_t j = 0; j < out_w; ++j) {
          const std::size_t x0 = bin(j, w, out_w), x1 = bin(j + 1, w, out_w);
          const double g = self.grad[(p * out_h + i) * out_w + j] / static_cast<double>((y1 - y0) * (x1 - x0));
          for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t xx = x0; xx < x1; ++xx) plane[y * w + xx] += g;
          }
        }
      }
    }
    detail::accumulate_grad(input, gx);
  });
}

Tensor layer_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank4(input, "layer_norm");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(c) + " entries");
  }
  std::vector<double> normalized(input.numel());
  std::vector<double> inv_std(n * hw);
  std::vector<double> out(input.numel());
  const double* x = input.data().data();
  const double* gv = gamma.data().data();
  const double* bv = beta.data().data();
  for (std::size_t b = 0; b < n; ++b) {
    const double* xb = x + b * c * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      double m = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) m += xb[ch * hw + p];
      m /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = xb[ch * hw + p] - m;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[b * hw + p] = is;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t idx = (b * c + ch) * hw + p;
        normalized[idx] = (x[idx] - m) * is;
        out[idx] = gv[ch] * normalized[idx] + bv[ch];
      }
    }
  }
  return detail::make_result(input.shape(), std::move(out), {&input, &gamma, &beta},
                             [input, gamma, beta, normalized = std::move(normalized),
                              inv_std = std::move(inv_std)](Node& self) {
    const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
    const double* g = self.grad.data();
    const double* gv = gamma.data().data();
    if (detail::wants_grad(gamma) || detail::wants_grad(beta)) {
      std::vector<double> gg(c, 0.0), gb(c, 0.0);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (b * c + ch) * hw;
          double sg = 0.0, sgx = 0.0;
          for (std::size_t p = 0; p < hw; ++p) {
            sg += g[base + p];
            sgx += g[base + p] * normalized[base + p];
          }
          gg[ch] += sgx;
          gb[ch] += sg;
        }
      }
      detail::accumulate_grad(gamma, gg);
      detail::accumulate_grad(beta, gb);
    }
    if (detail::wants_grad(input)) {
      std::vector<double> gx(input.numel());
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t p = 0; p < hw; ++p) {
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t idx = (b * c + ch) * hw + p;
            const double gh = g[idx] * gv[ch];
            mean_g += gh;
            mean_gx += gh * normalized[idx];
          }
          mean_g *= inv_c;
          mean_gx *= inv_c;
          const double is = inv_std[b * hw + p];
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t idx = (b * c + ch) * hw + p;
            gx[idx] = is * (g[idx] * gv[ch] - mean_g - normalized[idx] * mean_gx);
          }
        }
      }
      detail::accumulate_grad(input, gx);
    }
  });
}

Tensor gelu_tanh(const Tensor& input) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  auto xv = input.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double x = xv[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  if (g_recorder) MacsRecorder::note("gelu", xv.size(), input.shape());
  return detail::make_result(input.shape(), std::move(out), {&input}, [input](Node& self) {
    auto xv = input.data();
    std::vector<double> gx(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double x = xv[i];
      const double t = std::tanh(kC * (x + kA * x * x * x));
      const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      gx[i] = self.grad[i] * d;
    }
    detail::accumulate_grad(input, gx);
  });
}

Tensor leaky_relu(const Tensor& input, double slope) {
  auto xv = input.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0 ? xv[i] : slope * xv[i];
  return detail::make_result(input.shape(), std::move(out), {&input}, [input, slope](Node& self) {
    auto xv = input.data();
    std::vector<double> gx(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = self.grad[i] * (xv[i] > 0 ? 1.0 : slope);
    detail::accumulate_grad(input, gx);
  });
}

Tensor relu(const Tensor& input) { return leaky_relu(input, 0.0); }

Tensor activation(ActivationKind kind, const Tensor& input) {
  return kind == ActivationKind::relu ? relu(input) : leaky_relu(input, kLeakySlope);
}

Tensor softplus(const Tensor& input) {
  auto xv = input.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double x = xv[i];
    out[i] = x > 30.0 ? x : std::log1p(std::exp(x));
  }
  return detail::make_result(input.shape(), std::move(out), {&input}, [input](Node& self) {
    auto xv = input.data();
    std::vector<double> gx(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] = self.grad[i] / (1.0 + std::exp(-xv[i]));
    detail::accumulate_grad(input, gx);
  });
}

namespace {

// Maps output flat index -> input flat index for depth-to-space.
std::vector<std::size_t> shuffle_map(std::size_t n, std::size_t c_out, std::size_t h, std::size_t w, std::size_t r) {
  const std::size_t oh = h * r, ow = w * r, c_in = c_out * r * r;
  std::vector<std::size_t> map(n * c_out * oh * ow);
  std::size_t o = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < c_out; ++c) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          const std::size_t ic = c * r * r + (y % r) * r + (x % r);
          map[o++] = ((b * c_in + ic) * h + y / r) * w + x / r;
        }
      }
    }
  }
  return map;
}

Tensor gather(const Tensor& input, Shape out_shape, std::vector<std::size_t> map) {
  auto xv = input.data();
  std::vector<double> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = xv[map[i]];
  return detail::make_result(std::move(out_shape), std::move(out), {&input}, [input, map = std::move(map)](Node& self) {
    std::vector<double> gx(input.numel(), 0.0);
    for (std::size_t i = 0; i < map.size(); ++i) gx[map[i]] += self.grad[i];
    detail::accumulate_grad(input, gx);
  });
}

}  // namespace

Tensor pixel_shuffle(const Tensor& input, std::size_t r) {
  require_rank4(input, "pixel_shuffle");
  if (r == 0) throw ShapeError("pixel_shuffle: factor must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (c % (r * r) != 0) {
    throw ShapeError("pixel_shuffle: " + std::to_string(c) + " channels not divisible by r^2=" + std::to_string(r * r));
  }
  const std::size_t co = c / (r * r);
  return gather(input, {n, co, h * r, w * r}, shuffle_map(n, co, h, w, r));
}

Tensor pixel_unshuffle(const Tensor& input, std::size_t r) {
  require_rank4(input, "pixel_unshuffle");
  if (r == 0) throw ShapeError("pixel_unshuffle: factor must be positive");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % r != 0 || w % r != 0) throw ShapeError("pixel_unshuffle: spatial extents not divisible by factor");
  // Inverse permutation of the shuffle map.
  const auto fwd = shuffle_map(n, c, h / r, w / r, r);
  std::vector<std::size_t> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[fwd[i]] = i;
  return gather(input, {n, c * r * r, h / r, w / r}, std::move(inv));
}

std::pair<Tensor, Tensor> channel_split(const Tensor& input) {
  require_rank4(input, "channel_split");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (c % 2 != 0) throw ShapeError("channel_split: odd channel count " + std::to_string(c));
  const std::size_t half = c / 2;
  auto half_map = [&](std::size_t offset) {
    std::vector<std::size_t> map(n * half * hw);
    std::size_t o = 0;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < half; ++ch) {
        for (std::size_t p = 0; p < hw; ++p) map[o++] = (b * c + offset + ch) * hw + p;
      }
    }
    return map;
  };
  Shape s{n, half, input.dim(2), input.dim(3)};
  return {gather(input, s, half_map(0)), gather(input, s, half_map(half))};
}

Tensor channel_concat(const Tensor& a, const Tensor& b) {
  require_rank4(a, "channel_concat");
  require_rank4(b, "channel_concat");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("channel_concat: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  const std::size_t c = ca + cb;
  std::vector<double> out(n * c * hw);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(av.data() + s * ca * hw, ca * hw, out.data() + s * c * hw);
    std::copy_n(bv.data() + s * cb * hw, cb * hw, out.data() + (s * c + ca) * hw);
  }
  return detail::make_result({n, c, a.dim(2), a.dim(3)}, std::move(out), {&a, &b}, [a, b](Node& self) {
    const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3), c = ca + cb;
    std::vector<double> ga(a.numel()), gb(b.numel());
    for (std::size_t s = 0; s < n; ++s) {
      std::copy_n(self.grad.data() + s * c * hw, ca * hw, ga.data() + s * ca * hw);
      std::copy_n(self.grad.data() + (s * c + ca) * hw, cb * hw, gb.data() + s * cb * hw);
    }
    detail::accumulate_grad(a, ga);
    detail::accumulate_grad(b, gb);
  });
}

Tensor channel_scale(const Tensor& input, const Tensor& factors) {
  require_rank4(input, "channel_scale");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (factors.shape() != Shape{n, c, 1, 1}) {
    throw ShapeError("channel_scale: factors " + shape_str(factors.shape()) + " do not match input " +
                     shape_str(input.shape()));
  }
  auto xv = input.data();
  auto fv = factors.data();
  std::vector<double> out(xv.size());
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t i = 0; i < hw; ++i) out[p * hw + i] = fv[p] * xv[p * hw + i];
  }
  if (g_recorder) MacsRecorder::note("channel_scale", xv.size(), input.shape());
  return detail::make_result(input.shape(), std::move(out), {&input, &factors}, [input, factors](Node& self) {
    const std::size_t planes = input.dim(0) * input.dim(1), hw = input.dim(2) * input.dim(3);
    auto xv = input.data();
    auto fv = factors.data();
    if (detail::wants_grad(factors)) {
      std::vector<double> gf(planes, 0.0);
      for (std::size_t p = 0; p < planes; ++p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += self.grad[p * hw + i] * xv[p * hw + i];
        gf[p] = acc;
      }
      detail::accumulate_grad(factors, gf);
    }
    if (detail::wants_grad(input)) {
      std::vector<double> gx(xv.size());
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] = self.grad[p * hw + i] * fv[p];
      }
      detail::accumulate_grad(input, gx);
    }
  });
}

Tensor repeat_batch(const Tensor& input, std::size_t n) {
  if (input.rank() == 0 || input.dim(0) != 1) throw ShapeError("repeat_batch: expected batch of one");
  const std::size_t per = input.numel();
  std::vector<std::size_t> map(n * per);
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = i % per;
  Shape s = input.shape();
  s[0] = n;
  return gather(input, std::move(s), std::move(map));
}

Tensor pad_replicate(const Tensor& input, std::size_t h, std::size_t w) {
  require_rank4(input, "pad_replicate");
  const std::size_t n = input.dim(0), c = input.dim(1), ih = input.dim(2), iw = input.dim(3);
  if (h < ih || w < iw) throw ShapeError("pad_replicate: target smaller than input");
  std::vector<std::size_t> map(n * c * h * w);
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) map[o++] = (p * ih + std::min(y, ih - 1)) * iw + std::min(x, iw - 1);
    }
  }
  return gather(input, {n, c, h, w}, std::move(map));
}

Tensor crop(const Tensor& input, std::size_t h, std::size_t w) {
  require_rank4(input, "crop");
  const std::size_t n = input.dim(0), c = input.dim(1), ih = input.dim(2), iw = input.dim(3);
  if (h > ih || w > iw || h == 0 || w == 0) throw ShapeError("crop: window exceeds input");
  std::vector<std::size_t> map(n * c * h * w);
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) map[o++] = (p * ih + y) * iw + x;
    }
  }
  return gather(input, {n, c, h, w}, std::move(map));
}

MacsRecorder::MacsRecorder() : previous_(g_recorder) { g_recorder = this; }
MacsRecorder::~MacsRecorder() { g_recorder = previous_; }

std::uint64_t MacsRecorder::total() const {
  std::uint64_t t = 0;
  for (const auto& e : entries_) t += e.macs;
  return t;
}

void MacsRecorder::note(const char* kind, std::uint64_t macs, const Shape& output) {
  if (g_recorder) g_recorder->entries_.push_back({kind, macs, output});
}

}  // namespace llic
