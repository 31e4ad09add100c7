#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "logitbal/normal.hpp"

namespace logitbal {

struct GaussianComponent {
  double weight = 0.0;
  double mean = 0.0;
  double std_dev = 1.0;
};

/// Settings for mixture estimation. Defaults: 5 components, 3 EM passes per
/// update, momentum 0.99, 1024-point CDF grid spanning 6 sigmas past the
/// extreme component means.
struct EmConfig {
  int components = 5;
  int em_loops = 3;
  double momentum = 0.99;
  double sigma_floor = 1e-3;
  int grid_points = 1024;
  double grid_span = 6.0;

  void validate() const {
    if (components < 1) throw std::invalid_argument("EmConfig: components must be >= 1");
    if (em_loops < 1) throw std::invalid_argument("EmConfig: em_loops must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("EmConfig: momentum must be in [0,1)");
    if (sigma_floor <= 0.0) throw std::invalid_argument("EmConfig: sigma_floor must be positive");
    if (grid_points < 16) throw std::invalid_argument("EmConfig: grid_points must be >= 16");
    if (grid_span < 5.0) throw std::invalid_argument("EmConfig: grid_span must be >= 5");
  }
};

/// A K-component univariate normal mixture, immutable after construction.
/// Weights are normalized and standard deviations floored on construction;
/// a monotone (z, cdf) table over [min(mean - span*sigma), max(mean + span*sigma)]
/// is cached for inverse-CDF queries.
class GaussianMixture {
 public:
  GaussianMixture(std::vector<GaussianComponent> components, double sigma_floor = 1e-3,
                  int grid_points = 1024, double grid_span = 6.0)
      : components_(std::move(components)),
        sigma_floor_(sigma_floor),
        grid_points_(grid_points),
        grid_span_(grid_span) {
    if (components_.empty()) throw std::invalid_argument("GaussianMixture: no components");
    if (sigma_floor_ <= 0.0) throw std::invalid_argument("GaussianMixture: sigma_floor must be positive");
    if (grid_points_ < 16) throw std::invalid_argument("GaussianMixture: grid_points must be >= 16");
    double total = 0.0;
    for (const auto& c : components_) {
      if (!std::isfinite(c.weight) || !std::isfinite(c.mean) || !std::isfinite(c.std_dev))
        throw std::invalid_argument("GaussianMixture: non-finite component parameter");
      if (c.weight < 0.0) throw std::invalid_argument("GaussianMixture: negative component weight");
      total += c.weight;
    }
    if (!(total > 0.0)) throw std::invalid_argument("GaussianMixture: weights must have positive sum");
    for (auto& c : components_) {
      c.weight /= total;
      c.std_dev = std::max(c.std_dev, sigma_floor_);
    }
    build_grid();
  }

  std::size_t size() const { return components_.size(); }
  const std::vector<GaussianComponent>& components() const { return components_; }
  double sigma_floor() const { return sigma_floor_; }
  int grid_points() const { return grid_points_; }
  double grid_span() const { return grid_span_; }
  double grid_min() const { return grid_z_.front(); }
  double grid_max() const { return grid_z_.back(); }
  const std::vector<double>& grid_z() const { return grid_z_; }
  const std::vector<double>& grid_cdf() const { return grid_f_; }

  double pdf(double z) const {
    double d = 0.0;
    for (const auto& c : components_) d += c.weight * normal_pdf((z - c.mean) / c.std_dev) / c.std_dev;
    return d;
  }

  double log_pdf(double z) const {
    // log-sum-exp over component log densities
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : components_) {
      if (c.weight <= 0.0) continue;
      const double lw = std::log(c.weight) + normal_log_pdf((z - c.mean) / c.std_dev) - std::log(c.std_dev);
      best = std::max(best, lw);
    }
    if (!std::isfinite(best)) return -std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (const auto& c : components_) {
      if (c.weight <= 0.0) continue;
      const double lw = std::log(c.weight) + normal_log_pdf((z - c.mean) / c.std_dev) - std::log(c.std_dev);
      acc += std::exp(lw - best);
    }
    return best + std::log(acc);
  }

  double cdf(double z) const {
    double f = 0.0;
    for (const auto& c : components_) f += c.weight * normal_cdf((z - c.mean) / c.std_dev);
    return f;
  }

  /// Quantile of the mixture: grid interpolation refined by a few guarded
  /// Newton steps against the analytic cdf. p outside the grid's cdf range
  /// clamps to the grid endpoints.
  double inverse_cdf(double p) const {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("GaussianMixture::inverse_cdf: p must be in (0,1)");
    if (p <= grid_f_.front()) return grid_z_.front();
    if (p >= grid_f_.back()) return grid_z_.back();
    const auto it = std::lower_bound(grid_f_.begin(), grid_f_.end(), p);
    std::size_t hi = static_cast<std::size_t>(it - grid_f_.begin());
    if (hi == 0) hi = 1;
    const std::size_t lo = hi - 1;
    const double f_lo = grid_f_[lo], f_hi = grid_f_[hi];
    const double z_lo = grid_z_[lo], z_hi = grid_z_[hi];
    double z = (f_hi > f_lo) ? z_lo + (p - f_lo) / (f_hi - f_lo) * (z_hi - z_lo)
                             : 0.5 * (z_lo + z_hi);
    for (int step = 0; step < 2; ++step) {
      const double d = pdf(z);
      if (d < 1e-300) break;
      z = std::clamp(z - (cdf(z) - p) / d, z_lo, z_hi);
    }
    return z;
  }

 private:
  void build_grid() {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& c : components_) {
      lo = std::min(lo, c.mean - grid_span_ * c.std_dev);
      hi = std::max(hi, c.mean + grid_span_ * c.std_dev);
    }
    grid_z_.resize(static_cast<std::size_t>(grid_points_));
    grid_f_.resize(static_cast<std::size_t>(grid_points_));
    const double step = (hi - lo) / static_cast<double>(grid_points_ - 1);
    double prev = 0.0;
    for (int i = 0; i < grid_points_; ++i) {
      const double z = lo + step * i;
      grid_z_[static_cast<std::size_t>(i)] = z;
      prev = std::max(prev, cdf(z));
      grid_f_[static_cast<std::size_t>(i)] = prev;
    }
  }

  std::vector<GaussianComponent> components_;
  double sigma_floor_;
  int grid_points_;
  double grid_span_;
  std::vector<double> grid_z_;
  std::vector<double> grid_f_;
};

/// Sum over samples of the mixture log density.
inline double log_likelihood(const GaussianMixture& m, std::span<const double> samples) {
  double acc = 0.0;
  for (double x : samples) acc += m.log_pdf(x);
  return acc;
}

/// Single-Gaussian moment fit: sample mean and standard deviation.
inline GaussianMixture moment_fit(std::span<const double> samples, const EmConfig& cfg) {
  if (samples.empty()) throw std::invalid_argument("moment_fit: empty sample list");
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (double x : samples) var += (x - mean) * (x - mean);
  var /= static_cast<double>(samples.size());
  const double sd = std::sqrt(std::max(var, 0.0));
  return GaussianMixture({{1.0, mean, sd}}, cfg.sigma_floor, cfg.grid_points, cfg.grid_span);
}

/// Warm-started EM. Runs exactly cfg.em_loops expectation/maximization passes
/// from the parameters of `init`. An empty sample list returns `init`
/// unchanged; fewer samples than components falls back to a single-Gaussian
/// moment fit.
inline GaussianMixture em_fit(const GaussianMixture& init, std::span<const double> samples,
                              const EmConfig& cfg) {
  cfg.validate();
  if (samples.empty()) return init;
  const std::size_t k = init.size();
  if (samples.size() < k) return moment_fit(samples, cfg);

  const std::size_t n = samples.size();
  std::vector<GaussianComponent> comps = init.components();
  std::vector<double> resp(n * k);
  std::vector<double> log_w(k);

  for (int loop = 0; loop < cfg.em_loops; ++loop) {
    // E-step in log space
    for (std::size_t j = 0; j < k; ++j)
      log_w[j] = comps[j].weight > 0.0 ? std::log(comps[j].weight) : -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double lw =
            log_w[j] + normal_log_pdf((samples[i] - comps[j].mean) / comps[j].std_dev) - std::log(comps[j].std_dev);
        resp[i * k + j] = lw;
        best = std::max(best, lw);
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < k; ++j) denom += std::exp(resp[i * k + j] - best);
      const double log_denom = best + std::log(denom);
      for (std::size_t j = 0; j < k; ++j) resp[i * k + j] = std::exp(resp[i * k + j] - log_denom);
    }
    // M-step
    for (std::size_t j = 0; j < k; ++j) {
      double nj = 0.0, sx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nj += resp[i * k + j];
        sx += resp[i * k + j] * samples[i];
      }
      if (nj < 1e-12 * static_cast<double>(n)) {
        // starved component: keep its location, only update the weight
        comps[j].weight = nj / static_cast<double>(n);
        continue;
      }
      const double mu = sx / nj;
      double sv = 0.0;
      for (std::size_t i = 0; i < n; ++i) sv += resp[i * k + j] * (samples[i] - mu) * (samples[i] - mu);
      comps[j].weight = nj / static_cast<double>(n);
      comps[j].mean = mu;
      comps[j].std_dev = std::max(std::sqrt(std::max(sv / nj, 0.0)), cfg.sigma_floor);
    }
  }
  return GaussianMixture(std::move(comps), cfg.sigma_floor, cfg.grid_points, cfg.grid_span);
}

/// Staleness-weighted convex merge: each of (weight, mean, std) becomes
/// (1 - m^n) * fitted + m^n * old, component by component, with weights
/// renormalized. `n` is the exponent applied to the momentum factor.
inline GaussianMixture momentum_merge(const GaussianMixture& old_mix, const GaussianMixture& fitted,
                                      double momentum, std::uint64_t n) {
  if (old_mix.size() != fitted.size())
    throw std::invalid_argument("momentum_merge: component count mismatch (" +
                                std::to_string(old_mix.size()) + " vs " + std::to_string(fitted.size()) + ")");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("momentum_merge: momentum must be in [0,1)");
  const double keep = std::pow(momentum, static_cast<double>(n));
  const double take = 1.0 - keep;
  std::vector<GaussianComponent> merged(old_mix.size());
  for (std::size_t j = 0; j < merged.size(); ++j) {
    const auto& a = old_mix.components()[j];
    const auto& b = fitted.components()[j];
    merged[j].weight = take * b.weight + keep * a.weight;
    merged[j].mean = take * b.mean + keep * a.mean;
    merged[j].std_dev = take * b.std_dev + keep * a.std_dev;
  }
  return GaussianMixture(std::move(merged), old_mix.sigma_floor(), old_mix.grid_points(), old_mix.grid_span());
}

}  // namespace logitbal
