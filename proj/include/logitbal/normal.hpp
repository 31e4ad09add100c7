#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace logitbal {

inline constexpr double kInvSqrt2Pi = 0.3989422804014326779;  // 1/sqrt(2*pi)

/// Standard normal density.
inline double normal_pdf(double z) {
  return kInvSqrt2Pi * std::exp(-0.5 * z * z);
}

/// Log of the standard normal density.
inline double normal_log_pdf(double z) {
  return -0.5 * z * z - 0.9189385332046727418;  // log(sqrt(2*pi))
}

/// Standard normal CDF via the classic five-term polynomial approximation
/// (absolute error below 7.5e-8). The lower tail is evaluated directly and
/// the upper half is obtained as 1 - cdf(-z), so cdf(z) + cdf(-z) == 1
/// exactly and cdf(0) == 0.5.
inline double normal_cdf(double z) {
  if (!std::isfinite(z)) throw std::domain_error("normal_cdf: non-finite input");
  if (z == 0.0) return 0.5;
  if (z > 0.0) return 1.0 - normal_cdf(-z);
  // z < 0
  const double t = 1.0 / (1.0 - 0.2316419 * z);
  const double poly =
      t * (0.319381530 + t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))));
  return normal_pdf(z) * poly;
}

}  // namespace logitbal
