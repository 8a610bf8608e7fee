#include "llic/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "llic/image_io.hpp"
#include "llic/nn.hpp"
#include "llic/ops.hpp"

namespace llic {

namespace {

constexpr std::array<double, 5> kMsssimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr std::size_t kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;
constexpr std::size_t kMinSide = 160;

std::vector<double> gaussian_taps() {
  std::vector<double> taps(kWindow);
  const double centre = static_cast<double>(kWindow / 2);
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = static_cast<double>(i) - centre;
    taps[i] = std::exp(-d * d / (2.0 * kWindowSigma * kWindowSigma));
  }
  const double total = std::accumulate(taps.begin(), taps.end(), 0.0);
  for (double& t : taps) t /= total;
  return taps;
}

// Valid 1-D correlation along axis 2 (rows) or 3 (columns) of an NCHW tensor.
Tensor filter_axis(const Tensor& x, const std::vector<double>& taps, std::size_t axis) {
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), k = taps.size();
  const std::size_t oh = axis == 2 ? h - k + 1 : h, ow = axis == 3 ? w - k + 1 : w;
  const std::size_t stride = axis == 2 ? w : 1;
  std::vector<double> out(planes * oh * ow, 0.0);
  const double* in = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* src = in + p * h * w + y * w + xx;
        double acc = 0.0;
        for (std::size_t t = 0; t < k; ++t) acc += taps[t] * src[t * stride];
        out[(p * oh + y) * ow + xx] = acc;
      }
    }
  }
  return detail::make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x},
                             [x, taps, oh, ow, stride](detail::Node& self) {
                               const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
                               std::vector<double> g(x.numel(), 0.0);
                               for (std::size_t p = 0; p < planes; ++p) {
                                 for (std::size_t y = 0; y < oh; ++y) {
                                   for (std::size_t xx = 0; xx < ow; ++xx) {
                                     const double go = self.grad[(p * oh + y) * ow + xx];
                                     double* dst = g.data() + p * h * w + y * w + xx;
                                     for (std::size_t t = 0; t < taps.size(); ++t) dst[t * stride] += taps[t] * go;
                                   }
                                 }
                               }
                               detail::accumulate_grad(x, g);
                             });
}

// 2x2 mean pooling, stride 2; an odd trailing row/column is dropped.
Tensor avg_pool2(const Tensor& x) {
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = h / 2, ow = w / 2;
  std::vector<double> out(planes * oh * ow);
  const double* in = x.data().data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* s = in + p * h * w + 2 * y * w + 2 * xx;
        out[(p * oh + y) * ow + xx] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
      }
    }
  }
  return detail::make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x}, [x, oh, ow](detail::Node& self) {
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    std::vector<double> g(x.numel(), 0.0);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double go = 0.25 * self.grad[(p * oh + y) * ow + xx];
          double* d = g.data() + p * h * w + 2 * y * w + 2 * xx;
          d[0] += go;
          d[1] += go;
          d[w] += go;
          d[w + 1] += go;
        }
      }
    }
    detail::accumulate_grad(x, g);
  });
}

Tensor blur(const Tensor& x, const std::vector<double>& taps) {
  Tensor t = x;
  // Axes shorter than the window are left unfiltered.
  if (t.dim(2) >= taps.size()) t = filter_axis(t, taps, 2);
  if (t.dim(3) >= taps.size()) t = filter_axis(t, taps, 3);
  return t;
}

struct SsimTerms {
  Tensor ssim;  // (n, c) spatial means
  Tensor cs;
};

SsimTerms ssim_terms(const Tensor& x, const Tensor& y, const std::vector<double>& taps) {
  const Tensor mu1 = blur(x, taps), mu2 = blur(y, taps);
  const Tensor mu11 = mul(mu1, mu1), mu22 = mul(mu2, mu2), mu12 = mul(mu1, mu2);
  const Tensor s11 = sub(blur(mul(x, x), taps), mu11);
  const Tensor s22 = sub(blur(mul(y, y), taps), mu22);
  const Tensor s12 = sub(blur(mul(x, y), taps), mu12);
  const Tensor cs_map = div(add_scalar(scale(s12, 2.0), kC2), add_scalar(add(s11, s22), kC2));
  const Tensor lum = div(add_scalar(scale(mu12, 2.0), kC1), add_scalar(add(mu11, mu22), kC1));
  const Tensor ssim_map = mul(lum, cs_map);
  return {reduce(ReduceKind::mean, ssim_map, {2, 3}), reduce(ReduceKind::mean, cs_map, {2, 3})};
}

struct PolyFit {
  double centre = 0.0, spread = 1.0;
  std::array<double, 4> c{};  // in t = (q - centre) / spread

  double antiderivative(double q) const {
    const double t = (q - centre) / spread;
    double acc = 0.0, tp = t;
    for (std::size_t k = 0; k < 4; ++k, tp *= t) acc += c[k] * tp / static_cast<double>(k + 1);
    return spread * acc;
  }
};

// Least-squares cubic through (q, r), solved through normalized normal equations.
PolyFit fit_cubic(const std::vector<double>& q, const std::vector<double>& r) {
  PolyFit f;
  const double n = static_cast<double>(q.size());
  f.centre = std::accumulate(q.begin(), q.end(), 0.0) / n;
  double spread = 0.0;
  for (double v : q) spread = std::max(spread, std::fabs(v - f.centre));
  if (!(spread > 0.0)) throw DomainError("bd_rate: degenerate quality values");
  f.spread = spread;

  std::array<std::array<double, 5>, 4> a{};
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double t = (q[i] - f.centre) / spread;
    std::array<double, 4> pw{1.0, t, t * t, t * t * t};
    for (std::size_t r0 = 0; r0 < 4; ++r0) {
      for (std::size_t c0 = 0; c0 < 4; ++c0) a[r0][c0] += pw[r0] * pw[c0];
      a[r0][4] += pw[r0] * r[i];
    }
  }
  double scale_ref = 0.0;
  for (std::size_t i = 0; i < 4; ++i) scale_ref = std::max(scale_ref, std::fabs(a[i][i]));
  for (std::size_t col = 0; col < 4; ++col) {
    std::size_t piv = col;
    for (std::size_t i = col + 1; i < 4; ++i) {
      if (std::fabs(a[i][col]) > std::fabs(a[piv][col])) piv = i;
    }
    if (std::fabs(a[piv][col]) <= 1e-12 * scale_ref) throw DomainError("bd_rate: singular cubic fit");
    std::swap(a[piv], a[col]);
    for (std::size_t i = 0; i < 4; ++i) {
      if (i == col) continue;
      const double m = a[i][col] / a[col][col];
      for (std::size_t j = col; j < 5; ++j) a[i][j] -= m * a[col][j];
    }
  }
  for (std::size_t i = 0; i < 4; ++i) f.c[i] = a[i][4] / a[i][i];
  return f;
}

void quality_and_log_rate(const RDCurve& curve, QualityField field, std::vector<double>& q, std::vector<double>& r,
                          const char* which) {
  if (curve.size() < 4) throw DomainError(std::string("bd_rate: ") + which + " curve needs at least 4 points");
  for (const auto& p : curve) {
    if (!(p.bpp > 0.0)) throw DomainError(std::string("bd_rate: non-positive bpp in ") + which + " curve");
    double quality = p.psnr;
    if (field == QualityField::msssim) {
      if (!p.msssim) throw DomainError(std::string("bd_rate: ") + which + " curve lacks MS-SSIM values");
      quality = *p.msssim;
    }
    q.push_back(quality);
    r.push_back(std::log10(p.bpp));
  }
}

std::vector<RDPoint> sorted_by_psnr(RDCurve c) {
  std::sort(c.begin(), c.end(), [](const RDPoint& a, const RDPoint& b) { return a.psnr < b.psnr; });
  return c;
}

NaturalCubicSpline log_rate_spline(const RDCurve& curve, const char* which) {
  const auto c = sorted_by_psnr(curve);
  std::vector<double> xs, ys;
  for (const auto& p : c) {
    if (!(p.bpp > 0.0)) throw DomainError(std::string("rate_saving_curve: non-positive bpp in ") + which);
    xs.push_back(p.psnr);
    ys.push_back(std::log10(p.bpp));
  }
  return NaturalCubicSpline(std::move(xs), std::move(ys));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

double parse_number(const std::string& field, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size() || !std::isfinite(v)) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw FormatError("rd csv line " + std::to_string(line) + ": bad number '" + field + "'");
  }
}

}  // namespace

double psnr(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) throw ShapeError("psnr: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(x.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

Tensor ms_ssim_tensor(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape() || x.rank() != 4) {
    throw ShapeError("ms_ssim: expected matching (n, c, h, w) images, got " + shape_str(x.shape()) + " and " +
                     shape_str(y.shape()));
  }
  if (std::min(x.dim(2), x.dim(3)) < kMinSide) {
    throw ShapeError("ms_ssim: images need min side >= 160 for 5 scales, got " + shape_str(x.shape()));
  }
  static const std::vector<double> taps = gaussian_taps();
  Tensor a = x, b = y;
  Tensor product;
  for (std::size_t level = 0; level < kMsssimWeights.size(); ++level) {
    const SsimTerms t = ssim_terms(a, b, taps);
    const bool last = level + 1 == kMsssimWeights.size();
    const Tensor term = pow_nonneg(relu(last ? t.ssim : t.cs), kMsssimWeights[level]);
    product = product.defined() ? mul(product, term) : term;
    if (!last) {
      a = avg_pool2(a);
      b = avg_pool2(b);
    }
  }
  return mean(product);
}

double ms_ssim(const Tensor& x, const Tensor& y) {
  NoGradGuard no_grad;
  return ms_ssim_tensor(x.rank() == 3 ? reshape(x, {1, x.dim(0), x.dim(1), x.dim(2)}) : x,
                        y.rank() == 3 ? reshape(y, {1, y.dim(0), y.dim(1), y.dim(2)}) : y)
      .item();
}

double bd_rate(const RDCurve& anchor, const RDCurve& test, QualityField field) {
  std::vector<double> qa, ra, qt, rt;
  quality_and_log_rate(anchor, field, qa, ra, "anchor");
  quality_and_log_rate(test, field, qt, rt, "test");
  const double lo = std::max(*std::min_element(qa.begin(), qa.end()), *std::min_element(qt.begin(), qt.end()));
  const double hi = std::min(*std::max_element(qa.begin(), qa.end()), *std::max_element(qt.begin(), qt.end()));
  if (!(hi > lo)) throw DomainError("bd_rate: quality ranges do not overlap");
  const PolyFit fa = fit_cubic(qa, ra), ft = fit_cubic(qt, rt);
  const double ia = fa.antiderivative(hi) - fa.antiderivative(lo);
  const double it = ft.antiderivative(hi) - ft.antiderivative(lo);
  const double avg = (it - ia) / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

NaturalCubicSpline::NaturalCubicSpline(std::vector<double> xs, std::vector<double> ys)
    : xs_(std::move(xs)), ys_(std::move(ys)) {
  const std::size_t n = xs_.size();
  if (n < 2 || ys_.size() != n) throw DomainError("spline: need at least two knots");
  for (std::size_t i = 1; i < n; ++i) {
    if (!(xs_[i] > xs_[i - 1])) throw DomainError("spline: knots must be strictly increasing");
  }
  // Tridiagonal system for the interior second derivatives (natural ends).
  m_.assign(n, 0.0);
  if (n == 2) return;
  std::vector<double> diag(n, 0.0), rhs(n, 0.0), upper(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = xs_[i] - xs_[i - 1], h1 = xs_[i + 1] - xs_[i];
    diag[i] = 2.0 * (h0 + h1);
    upper[i] = h1;
    rhs[i] = 6.0 * ((ys_[i + 1] - ys_[i]) / h1 - (ys_[i] - ys_[i - 1]) / h0);
    if (i > 1) {
      const double w = h0 / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    m_[i] = (rhs[i] - upper[i] * m_[i + 1]) / diag[i];
  }
}

double NaturalCubicSpline::operator()(double x) const {
  if (!(x >= xs_.front() && x <= xs_.back())) throw DomainError("spline: extrapolation requested");
  std::size_t i = static_cast<std::size_t>(std::upper_bound(xs_.begin(), xs_.end(), x) - xs_.begin());
  i = std::clamp<std::size_t>(i, 1, xs_.size() - 1) - 1;
  const double h = xs_[i + 1] - xs_[i];
  const double a = (xs_[i + 1] - x) / h, b = (x - xs_[i]) / h;
  return a * ys_[i] + b * ys_[i + 1] + ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
}

std::vector<RateSaving> rate_saving_curve(const RDCurve& anchor, const RDCurve& test,
                                          std::span<const double> psnr_grid) {
  const NaturalCubicSpline sa = log_rate_spline(anchor, "anchor"), st = log_rate_spline(test, "test");
  std::vector<RateSaving> out;
  for (double p : psnr_grid) {
    if (p < sa.lo() || p > sa.hi() || p < st.lo() || p > st.hi()) {
      throw DomainError("rate_saving_curve: PSNR " + std::to_string(p) + " outside a curve's range");
    }
    out.push_back({p, (std::pow(10.0, st(p) - sa(p)) - 1.0) * 100.0});
  }
  return out;
}

std::vector<double> parse_grid(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  for (std::string part; std::getline(ss, part, ':');) parts.push_back(trim(part));
  if (parts.size() != 3) throw DomainError("grid: expected lo:hi:step, got '" + spec + "'");
  double v[3];
  for (int i = 0; i < 3; ++i) {
    try {
      std::size_t used = 0;
      v[i] = std::stod(parts[i], &used);
      if (used != parts[i].size()) throw std::invalid_argument(parts[i]);
    } catch (const std::exception&) {
      throw DomainError("grid: bad number '" + parts[i] + "'");
    }
  }
  if (!(v[2] > 0.0) || !(v[1] >= v[0])) throw DomainError("grid: need lo <= hi and step > 0");
  std::vector<double> out;
  for (std::size_t i = 0;; ++i) {
    const double p = v[0] + static_cast<double>(i) * v[2];
    if (p > v[1] + 1e-9 * v[2]) break;
    out.push_back(std::min(p, v[1]));
  }
  return out;
}

std::string format_rd_csv(const RDCurve& curve) {
  std::string out = "lambda_index,bpp,psnr,msssim\n";
  char buf[160];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,", p.lambda_index, p.bpp, p.psnr);
    out += buf;
    if (p.msssim) {
      std::snprintf(buf, sizeof buf, "%.17g", *p.msssim);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

RDCurve parse_rd_csv(const std::string& text) {
  RDCurve curve;
  std::stringstream ss(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(ss, line);) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.rfind("lambda_index", 0) == 0) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    for (std::string f; std::getline(ls, f, ',');) fields.push_back(trim(f));
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() < 3 || fields.size() > 4) {
      throw FormatError("rd csv line " + std::to_string(line_no) + ": expected 3 or 4 fields");
    }
    RDPoint p;
    p.lambda_index = static_cast<int>(parse_number(fields[0], line_no));
    p.bpp = parse_number(fields[1], line_no);
    p.psnr = parse_number(fields[2], line_no);
    if (fields.size() == 4 && !fields[3].empty()) p.msssim = parse_number(fields[3], line_no);
    curve.push_back(p);
  }
  return curve;
}

RDCurve read_rd_csv(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return parse_rd_csv(std::string(bytes.begin(), bytes.end()));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_rd_csv(const RDCurve& curve, const std::filesystem::path& path) {
  const std::string text = format_rd_csv(curve);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace llic
