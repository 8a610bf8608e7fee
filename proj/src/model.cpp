#include "llic/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "llic/entropy.hpp"
#include "llic/ops.hpp"

namespace llic {

namespace {

// softplus^-1(4)
const double kInitialSigmaBias = std::log(std::expm1(4.0));

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

struct Mass {
  double p, d_residual, d_scale;
};

// Mass of N(0, s) on [r - 1/2, r + 1/2], computed on the lower tail for accuracy.
Mass mass_and_grad(double r, double s) {
  const double a = std::fabs(r);
  const double u = (0.5 - a) / s;
  const double l = (-0.5 - a) / s;
  const double pu = normal_pdf(u), pl = normal_pdf(l);
  const double d_abs = (pl - pu) / s;
  return {normal_cdf(u) - normal_cdf(l), r < 0 ? -d_abs : d_abs, (l * pl - u * pu) / s};
}

void append_switches(std::ostringstream& os, const BlockSwitches& s) {
  os << ";static=" << s.static_weights << ";ffn=" << s.use_ffn_instead_of_gate << ";linear=" << s.linear_embedding
     << ";no_stb=" << s.disable_stb << ";no_ctb=" << s.disable_ctb << ";swap=" << s.swap_stb_ctb;
}

}  // namespace

ModelConfig ModelConfig::desk_scale() {
  ModelConfig c;
  c.N = 32;
  c.M = 48;
  c.hyper = 32;
  return c;
}

void ModelConfig::validate() const {
  if (N == 0 || M == 0 || hyper == 0) throw ShapeError("model config: widths must be positive");
  for (auto k : analysis_kernels) {
    if (k % 2 == 0) throw ShapeError("model config: analysis kernel sizes must be odd");
  }
  for (auto k : synthesis_kernels) {
    if (k % 2 == 0) throw ShapeError("model config: synthesis kernel sizes must be odd");
  }
  block(N, analysis_kernels[0]).validate();
  block(M, analysis_kernels[3]).validate();
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "llic-model;N=" << N << ";M=" << M << ";hyper=" << hyper << ";ka=";
  for (std::size_t i = 0; i < 4; ++i) os << (i ? "," : "") << analysis_kernels[i];
  os << ";ks=";
  for (std::size_t i = 0; i < 4; ++i) os << (i ? "," : "") << synthesis_kernels[i];
  os << ";blocks=" << blocks_per_stage << ";gate=" << gate_expansion << ";cond_hidden=" << condition_hidden;
  append_switches(os, switches);
  os << ";layout=" << static_cast<int>(layout);
  return os.str();
}

std::uint64_t ModelConfig::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

BlockConfig ModelConfig::block(std::size_t channels, std::size_t kernel) const {
  BlockConfig b;
  b.channels = channels;
  b.kernel = kernel;
  b.gate_expansion = gate_expansion;
  b.condition_hidden = condition_hidden;
  b.switches = switches;
  b.layout = layout;
  return b;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double gaussian_mass(double residual, double sigma) { return mass_and_grad(residual, sigma).p; }

Tensor quantize(const Tensor& y, const Tensor& mu, QuantMode mode, Rng* rng) {
  if (mu.defined() && mu.shape() != y.shape()) {
    throw ShapeError("quantize: mean shape " + shape_str(mu.shape()) + " vs " + shape_str(y.shape()));
  }
  const auto yv = y.data();
  const std::size_t n = yv.size();
  switch (mode) {
    case QuantMode::noise: {
      if (!rng) throw std::invalid_argument("quantize: noise mode needs an Rng");
      Tensor u(y.shape());
      for (double& v : u.data()) v = rng->uniform(-0.5, 0.5);
      return add(y, u);
    }
    case QuantMode::round:
    case QuantMode::ste: {
      std::vector<double> out(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double m = mu.defined() ? mu.data()[i] : 0.0;
        out[i] = std::round(yv[i] - m) + m;
      }
      if (mode == QuantMode::ste) return with_values(y, std::move(out));
      return Tensor(y.shape(), std::move(out));
    }
  }
  throw std::invalid_argument("quantize: unknown mode");
}

Tensor gaussian_likelihood(const Tensor& residual, const Tensor& sigma) {
  if (residual.shape() != sigma.shape()) {
    throw ShapeError("gaussian_likelihood: " + shape_str(residual.shape()) + " vs " + shape_str(sigma.shape()));
  }
  const std::size_t n = residual.numel();
  std::vector<double> p(n), dr(n), ds(n);
  const auto rv = residual.data();
  const auto sv = sigma.data();
  for (std::size_t i = 0; i < n; ++i) {
    const Mass m = mass_and_grad(rv[i], sv[i]);
    if (m.p < kLikelihoodFloor) {
      p[i] = kLikelihoodFloor;
    } else {
      p[i] = m.p;
      dr[i] = m.d_residual;
      ds[i] = m.d_scale;
    }
  }
  return detail::make_result(residual.shape(), std::move(p), {&residual, &sigma},
                             [residual, sigma, dr = std::move(dr), ds = std::move(ds)](detail::Node& out) {
                               const std::size_t n = out.grad.size();
                               std::vector<double> g(n);
                               if (detail::wants_grad(residual)) {
                                 for (std::size_t i = 0; i < n; ++i) g[i] = out.grad[i] * dr[i];
                                 detail::accumulate_grad(residual, g);
                               }
                               if (detail::wants_grad(sigma)) {
                                 for (std::size_t i = 0; i < n; ++i) g[i] = out.grad[i] * ds[i];
                                 detail::accumulate_grad(sigma, g);
                               }
                             });
}

Tensor bits_from_likelihood(const Tensor& pmf) { return scale(sum(log(pmf)), -1.0 / std::log(2.0)); }

FactorizedPrior::FactorizedPrior(ParamSet& params, const std::string& name, std::size_t channels) {
  loc_ = params.add(name + ".loc", {channels}, 0.0);
  log_scale_ = params.add(name + ".log_scale", {channels}, 0.0);
}

double FactorizedPrior::scale(std::size_t channel) const {
  return std::clamp(std::exp(log_scale_.data()[channel]), kSigmaMin, kSigmaMax);
}

Tensor factorized_likelihood(const Tensor& z, const FactorizedPrior& prior) {
  if (z.rank() != 4 || z.dim(1) != prior.loc().numel()) {
    throw ShapeError("factorized_likelihood: z " + shape_str(z.shape()) + " vs " +
                     std::to_string(prior.loc().numel()) + " prior channels");
  }
  const std::size_t batch = z.dim(0), channels = z.dim(1), plane = z.dim(2) * z.dim(3);
  const std::size_t n = z.numel();
  std::vector<double> p(n), dr(n), dls(n);
  const auto zv = z.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double loc = prior.loc().data()[c];
      const double raw = std::exp(prior.log_scale().data()[c]);
      const double s = std::clamp(raw, kSigmaMin, kSigmaMax);
      const bool clamped = raw != s;
      for (std::size_t i = (b * channels + c) * plane, e = i + plane; i < e; ++i) {
        const Mass m = mass_and_grad(zv[i] - loc, s);
        if (m.p < kLikelihoodFloor) {
          p[i] = kLikelihoodFloor;
          continue;
        }
        p[i] = m.p;
        dr[i] = m.d_residual;
        dls[i] = clamped ? 0.0 : m.d_scale * s;
      }
    }
  }
  const Tensor loc = prior.loc(), log_scale = prior.log_scale();
  return detail::make_result(
      z.shape(), std::move(p), {&z, &loc, &log_scale},
      [z, loc, log_scale, dr = std::move(dr), dls = std::move(dls), channels, plane](detail::Node& out) {
        const std::size_t n = out.grad.size();
        if (detail::wants_grad(z)) {
          std::vector<double> g(n);
          for (std::size_t i = 0; i < n; ++i) g[i] = out.grad[i] * dr[i];
          detail::accumulate_grad(z, g);
        }
        std::vector<double> gl(channels, 0.0), gs(channels, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t c = (i / plane) % channels;
          gl[c] -= out.grad[i] * dr[i];
          gs[c] += out.grad[i] * dls[i];
        }
        detail::accumulate_grad(loc, gl);
        detail::accumulate_grad(log_scale, gs);
      });
}

// At least 48 so the latent keeps the 3x3 support the block attention needs.
std::size_t padded_extent(std::size_t v) { return std::max<std::size_t>(48, (v + 15) / 16 * 16); }

CompressionModel::CompressionModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t N = config_.N, M = config_.M, H = config_.hyper;

  analysis_blocks_.resize(4);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t cin = s == 0 ? 3 : N, cout = s == 3 ? M : N;
    const std::string stage = "g_a.stage" + std::to_string(s);
    down_.emplace_back(params_, stage + ".down", cin, cout, rng);
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      analysis_blocks_[s].emplace_back(params_, stage + ".block" + std::to_string(b),
                                       config_.block(cout, config_.analysis_kernels[s]), Direction::forward, rng);
    }
  }
  synthesis_blocks_.resize(4);
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t cin = s == 0 ? M : N, cout = s == 3 ? 3 : N;
    const std::string stage = "g_s.stage" + std::to_string(s);
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      synthesis_blocks_[s].emplace_back(params_, stage + ".block" + std::to_string(b),
                                        config_.block(cin, config_.synthesis_kernels[s]), Direction::inverse, rng);
    }
    up_.emplace_back(params_, stage + ".up", cin, cout, rng);
  }

  ha1_ = Conv(params_, "h_a.conv0", ConvSpec::same(M, H, 3), rng);
  ha2_ = Conv(params_, "h_a.conv1", ConvSpec::down(H, H, 5), rng);
  ha3_ = Conv(params_, "h_a.conv2", ConvSpec::down(H, H, 5), rng);
  hs1_ = Conv(params_, "h_s.conv0", ConvSpec::same(H, 4 * H, 5), rng);
  hs2_ = Conv(params_, "h_s.conv1", ConvSpec::same(H, 4 * H, 5), rng);
  hs3_ = Conv(params_, "h_s.conv2", ConvSpec::same(H, 2 * M, 3), rng);
  // Stacked pre-norm blocks leave y with rms around 4 at init; start sigma
  // there rather than at softplus(0) ~ 0.69, where most residuals would escape.
  Tensor scale_bias = hs3_.bias();
  for (std::size_t c = M; c < 2 * M; ++c) scale_bias.data()[c] += kInitialSigmaBias;
  prior_ = FactorizedPrior(params_, "prior", H);
}

Tensor CompressionModel::analysis(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("analysis: expected (n, 3, h, w), got " + shape_str(x.shape()));
  if (x.dim(2) % 16 != 0 || x.dim(3) % 16 != 0) {
    throw ShapeError("analysis: spatial extents must be multiples of 16, got " + shape_str(x.shape()));
  }
  Tensor t = x;
  for (std::size_t s = 0; s < 4; ++s) {
    t = down_[s].forward(t);
    for (const auto& b : analysis_blocks_[s]) t = b.forward(t);
  }
  return t;
}

Tensor CompressionModel::synthesis(const Tensor& y_hat) const {
  if (y_hat.rank() != 4 || y_hat.dim(1) != config_.M) {
    throw ShapeError("synthesis: expected (n, " + std::to_string(config_.M) + ", h, w), got " +
                     shape_str(y_hat.shape()));
  }
  Tensor t = y_hat;
  for (std::size_t s = 0; s < 4; ++s) {
    for (const auto& b : synthesis_blocks_[s]) t = b.forward(t);
    t = up_[s].forward(t);
  }
  return t;
}

Tensor CompressionModel::hyper_analysis(const Tensor& y) const {
  Tensor t = leaky_relu(ha1_(y));
  t = leaky_relu(ha2_(t));
  return ha3_(t);
}

GaussianParams CompressionModel::hyper_synthesis(const Tensor& z_hat, std::size_t lat_h, std::size_t lat_w) const {
  Tensor t = leaky_relu(pixel_shuffle(hs1_(z_hat), 2));
  t = leaky_relu(pixel_shuffle(hs2_(t), 2));
  t = crop(hs3_(t), lat_h, lat_w);
  auto [mu, raw] = channel_split(t);
  return {mu, clamp(softplus(raw), kSigmaMin, kSigmaMax)};
}

ForwardResult CompressionModel::forward(const Tensor& x, ForwardMode mode, Rng* rng) const {
  ForwardResult r;
  r.y = analysis(x);
  r.z = hyper_analysis(r.y);
  const std::size_t lh = r.y.dim(2), lw = r.y.dim(3);
  if (mode == ForwardMode::train) {
    r.z_q = quantize(r.z, {}, QuantMode::noise, rng);
    r.gauss = hyper_synthesis(r.z_q, lh, lw);
    r.y_q = quantize(r.y, {}, QuantMode::noise, rng);
    r.bits_y = bits_from_likelihood(gaussian_likelihood(sub(r.y_q, r.gauss.mu), r.gauss.sigma));
    r.bits_z = bits_from_likelihood(factorized_likelihood(r.z_q, prior_));
    r.x_hat = synthesis(quantize(r.y, r.gauss.mu, QuantMode::ste));
    return r;
  }
  r.z_q = quantize(r.z, {}, QuantMode::round);
  r.gauss = hyper_synthesis(r.z_q, lh, lw);
  r.y_q = quantize(r.y, r.gauss.mu, QuantMode::round);
  // Integer residuals and the scales the coder will actually use.
  Tensor residual(r.y.shape()), coded_sigma(r.y.shape());
  const auto& table = scale_table();
  for (std::size_t i = 0; i < residual.numel(); ++i) {
    residual.data()[i] = std::round(r.y.data()[i] - r.gauss.mu.data()[i]);
    coded_sigma.data()[i] = table[scale_index(r.gauss.sigma.data()[i])];
  }
  r.bits_y = bits_from_likelihood(gaussian_likelihood(residual, coded_sigma));
  r.bits_z = bits_from_likelihood(factorized_likelihood(r.z_q, prior_));
  r.x_hat = clamp(synthesis(r.y_q), 0.0, 1.0);
  return r;
}

}  // namespace llic
