#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "llic/tensor.hpp"

namespace llic {

inline constexpr double kPsnrCap = 100.0;

/// -10 log10(MSE) for images in [0, 1]; identical inputs give kPsnrCap.
double psnr(const Tensor& x, const Tensor& y);

/// Differentiable 5-scale MS-SSIM of (n, c, h, w) images in [0, 1], averaged
/// over samples and channels. min(h, w) must be at least 160.
Tensor ms_ssim_tensor(const Tensor& x, const Tensor& y);
double ms_ssim(const Tensor& x, const Tensor& y);

struct RDPoint {
  int lambda_index = 0;
  double bpp = 0.0;
  double psnr = 0.0;
  std::optional<double> msssim;
};
using RDCurve = std::vector<RDPoint>;

enum class QualityField { psnr, msssim };

/// Classic Bjontegaard delta rate in percent (negative: test needs fewer bits).
double bd_rate(const RDCurve& anchor, const RDCurve& test, QualityField field = QualityField::psnr);

/// Interpolating natural cubic spline.
class NaturalCubicSpline {
 public:
  NaturalCubicSpline(std::vector<double> xs, std::vector<double> ys);
  /// Throws DomainError outside [front, back] of the knots.
  double operator()(double x) const;
  double lo() const { return xs_.front(); }
  double hi() const { return xs_.back(); }

 private:
  std::vector<double> xs_, ys_, m_;  // m_: second derivatives
};

struct RateSaving {
  double psnr;
  double percent;  // (bpp_test / bpp_anchor - 1) * 100
};

std::vector<RateSaving> rate_saving_curve(const RDCurve& anchor, const RDCurve& test,
                                          std::span<const double> psnr_grid);

/// "lo:hi:step", inclusive of hi when it lies on the grid.
std::vector<double> parse_grid(const std::string& spec);

/// CSV with header lambda_index,bpp,psnr,msssim (msssim may be empty).
std::string format_rd_csv(const RDCurve& curve);
RDCurve parse_rd_csv(const std::string& text);
RDCurve read_rd_csv(const std::filesystem::path& path);
void write_rd_csv(const RDCurve& curve, const std::filesystem::path& path);

}  // namespace llic
