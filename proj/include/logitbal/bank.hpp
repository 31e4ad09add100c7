#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "logitbal/logit_matrix.hpp"
#include "logitbal/mixture.hpp"

namespace logitbal {

/// Per-domain C x C mixtures plus the shared positive/negative anchor
/// mixtures. Each cell tracks how many estimation rounds it has been skipped;
/// that count drives the momentum exponent of its next merge, so cells that
/// went stale take larger steps toward fresh data. Anchors are estimated from
/// the pooled source-domain diagonal (positive) and off-diagonal (negative)
/// samples and are never touched by target-domain updates.
class GmmBank {
 public:
  GmmBank(int num_classes, EmConfig cfg = {}, std::size_t n_min = 100)
      : num_classes_(num_classes), cfg_(cfg), n_min_(n_min) {
    if (num_classes <= 0) throw std::invalid_argument("GmmBank: num_classes must be positive");
    if (n_min == 0) throw std::invalid_argument("GmmBank: n_min must be positive");
    cfg_.validate();
    const std::size_t cells = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes);
    const GaussianMixture seed = default_mixture(cfg_);
    for (auto* mixes : {&source_, &target_}) mixes->assign(cells, seed);
    staleness_source_.assign(cells, 0);
    staleness_target_.assign(cells, 0);
    estimated_source_.assign(cells, false);
    estimated_target_.assign(cells, false);
    anchor_pos_.push_back(seed);
    anchor_neg_.push_back(seed);
  }

  /// Broad warm-start mixture: equally weighted components spread over
  /// [-4, 4] with std 2, so the first EM passes have distinct modes to move.
  static GaussianMixture default_mixture(const EmConfig& cfg) {
    std::vector<GaussianComponent> comps(static_cast<std::size_t>(cfg.components));
    const int k = cfg.components;
    for (int j = 0; j < k; ++j) {
      const double mean = k == 1 ? 0.0 : -4.0 + 8.0 * static_cast<double>(j) / static_cast<double>(k - 1);
      comps[static_cast<std::size_t>(j)] = {1.0 / static_cast<double>(k), mean, 2.0};
    }
    return GaussianMixture(std::move(comps), cfg.sigma_floor, cfg.grid_points, cfg.grid_span);
  }

  int num_classes() const { return num_classes_; }
  std::size_t n_min() const { return n_min_; }
  const EmConfig& em_config() const { return cfg_; }

  const GaussianMixture& mixture(Domain d, int label, int cls) const {
    return mixes(d)[index(label, cls)];
  }
  std::uint64_t staleness(Domain d, int label, int cls) const {
    return (d == Domain::kSource ? staleness_source_ : staleness_target_)[index(label, cls)];
  }
  bool estimated(Domain d, int label, int cls) const {
    return (d == Domain::kSource ? estimated_source_ : estimated_target_)[index(label, cls)];
  }
  bool anchors_estimated() const { return anchors_estimated_; }
  const GaussianMixture& anchor_pos() const { return anchor_pos_.front(); }
  const GaussianMixture& anchor_neg() const { return anchor_neg_.front(); }

  /// Cells of `domain` still missing an estimate, as "(c,l)" strings.
  std::vector<std::string> missing_cells(Domain d) const {
    std::vector<std::string> out;
    for (int i = 0; i < num_classes_; ++i)
      for (int j = 0; j < num_classes_; ++j)
        if (!estimated(d, i, j))
          out.push_back("(" + std::to_string(i) + "," + std::to_string(j) + ")");
    return out;
  }

  bool all_estimated(Domain d) const { return missing_cells(d).empty(); }

  // mutation hooks used by update_bank and by deserialization
  void set_mixture(Domain d, int label, int cls, GaussianMixture m, bool estimated_flag,
                   std::uint64_t staleness_count) {
    mixes(d)[index(label, cls)] = std::move(m);
    (d == Domain::kSource ? estimated_source_ : estimated_target_)[index(label, cls)] = estimated_flag;
    (d == Domain::kSource ? staleness_source_ : staleness_target_)[index(label, cls)] = staleness_count;
  }
  void bump_staleness(Domain d, int label, int cls) {
    ++(d == Domain::kSource ? staleness_source_ : staleness_target_)[index(label, cls)];
  }
  void set_anchors(GaussianMixture pos, GaussianMixture neg, bool estimated_flag) {
    anchor_pos_.front() = std::move(pos);
    anchor_neg_.front() = std::move(neg);
    anchors_estimated_ = estimated_flag;
  }

 private:
  std::vector<GaussianMixture>& mixes(Domain d) { return d == Domain::kSource ? source_ : target_; }
  const std::vector<GaussianMixture>& mixes(Domain d) const {
    return d == Domain::kSource ? source_ : target_;
  }
  std::size_t index(int label, int cls) const {
    if (label < 0 || label >= num_classes_ || cls < 0 || cls >= num_classes_)
      throw std::invalid_argument("GmmBank: cell index out of range");
    return static_cast<std::size_t>(label) * static_cast<std::size_t>(num_classes_) +
           static_cast<std::size_t>(cls);
  }

  int num_classes_;
  EmConfig cfg_;
  std::size_t n_min_;
  std::vector<GaussianMixture> source_;
  std::vector<GaussianMixture> target_;
  std::vector<std::uint64_t> staleness_source_;
  std::vector<std::uint64_t> staleness_target_;
  std::vector<bool> estimated_source_;
  std::vector<bool> estimated_target_;
  // single-element vectors so the non-default-constructible mixture can be swapped in place
  std::vector<GaussianMixture> anchor_pos_;
  std::vector<GaussianMixture> anchor_neg_;
  bool anchors_estimated_ = false;
};

/// One estimation round for one domain. Every sampled cell is refit by
/// warm-started EM and merged with momentum exponent staleness + 1, then its
/// staleness resets; skipped cells age by one. A source-domain round also
/// refreshes the anchors from the pooled diagonal and off-diagonal samples,
/// always with exponent 1.
inline void update_bank(GmmBank& bank, Domain domain, const CellSamples& samples, const EmConfig& cfg) {
  if (samples.num_classes != bank.num_classes())
    throw std::invalid_argument("update_bank: class count mismatch");
  const int c = bank.num_classes();
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      if (samples.is_skipped(i, j)) {
        bank.bump_staleness(domain, i, j);
        continue;
      }
      const GaussianMixture& current = bank.mixture(domain, i, j);
      const GaussianMixture fitted = em_fit(current, samples.at(i, j), cfg);
      const std::uint64_t exponent = bank.staleness(domain, i, j) + 1;
      bank.set_mixture(domain, i, j, momentum_merge(current, fitted, cfg.momentum, exponent),
                       /*estimated_flag=*/true, /*staleness_count=*/0);
    }
  }
  if (domain != Domain::kSource) return;

  std::vector<double> pos_pool, neg_pool;
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < c; ++j) {
      if (samples.is_skipped(i, j)) continue;
      auto& pool = i == j ? pos_pool : neg_pool;
      const auto& cell = samples.at(i, j);
      pool.insert(pool.end(), cell.begin(), cell.end());
    }
  const std::size_t k = static_cast<std::size_t>(cfg.components);
  if (pos_pool.size() < k || neg_pool.size() < k) return;
  GaussianMixture pos = momentum_merge(bank.anchor_pos(), em_fit(bank.anchor_pos(), pos_pool, cfg),
                                       cfg.momentum, 1);
  GaussianMixture neg = momentum_merge(bank.anchor_neg(), em_fit(bank.anchor_neg(), neg_pool, cfg),
                                       cfg.momentum, 1);
  bank.set_anchors(std::move(pos), std::move(neg), true);
}

}  // namespace logitbal
