#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "logitbal/bank.hpp"
#include "logitbal/logit_data.hpp"

namespace logitbal {

/// Monotone lookup table for one cell's correction z -> delta(z), where
/// z + delta(z) is the anchor quantile at the cell's own cumulative
/// probability. Queries outside the tabulated range clamp to the endpoint
/// offsets.
class OffsetTable {
 public:
  OffsetTable() = default;

  OffsetTable(std::vector<double> z, std::vector<double> delta)
      : z_(std::move(z)), delta_(std::move(delta)) {
    if (z_.size() != delta_.size() || z_.size() < 2)
      throw std::invalid_argument("OffsetTable: need matching node arrays of size >= 2");
  }

  bool empty() const { return z_.empty(); }

  double operator()(double z) const {
    if (z_.empty()) return 0.0;
    if (z <= z_.front()) return delta_.front();
    if (z >= z_.back()) return delta_.back();
    const auto it = std::lower_bound(z_.begin(), z_.end(), z);
    const std::size_t hi = static_cast<std::size_t>(it - z_.begin());
    const std::size_t lo = hi - 1;
    const double t = (z - z_[lo]) / (z_[hi] - z_[lo]);
    return delta_[lo] + t * (delta_[hi] - delta_[lo]);
  }

 private:
  std::vector<double> z_;
  std::vector<double> delta_;
};

/// The full C x C set of correction tables for one domain. Cells the bank has
/// not estimated yet get an identity (zero-offset) table so callers can apply
/// the evaluator uniformly while the bank warms up.
class OffsetEvaluator {
 public:
  OffsetEvaluator(int num_classes, std::vector<OffsetTable> tables, std::vector<bool> estimated)
      : num_classes_(num_classes), tables_(std::move(tables)), estimated_(std::move(estimated)) {
    const std::size_t want = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes);
    if (tables_.size() != want || estimated_.size() != want)
      throw std::invalid_argument("OffsetEvaluator: table count mismatch");
  }

  /// Identity evaluator: every offset is zero.
  static OffsetEvaluator identity(int num_classes) {
    const std::size_t n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes);
    return OffsetEvaluator(num_classes, std::vector<OffsetTable>(n), std::vector<bool>(n, false));
  }

  int num_classes() const { return num_classes_; }
  bool estimated(int label, int cls) const { return estimated_[index(label, cls)]; }

  /// delta_{label,cls}(z)
  double offset(int label, int cls, double z) const { return tables_[index(label, cls)](z); }

 private:
  std::size_t index(int label, int cls) const {
    if (label < 0 || label >= num_classes_ || cls < 0 || cls >= num_classes_)
      throw std::invalid_argument("OffsetEvaluator: cell index out of range");
    return static_cast<std::size_t>(label) * static_cast<std::size_t>(num_classes_) +
           static_cast<std::size_t>(cls);
  }

  int num_classes_;
  std::vector<OffsetTable> tables_;
  std::vector<bool> estimated_;
};

/// Tabulates every cell's correction against its anchor: diagonal cells map
/// through the positive anchor, off-diagonal through the negative one. Node
/// values of z + delta are forced non-decreasing so the map always preserves
/// logit ordering.
inline OffsetEvaluator build_offsets(const GmmBank& bank, Domain domain) {
  if (!bank.anchors_estimated()) throw std::runtime_error("build_offsets: anchors not estimated");
  const int c = bank.num_classes();
  std::vector<OffsetTable> tables(static_cast<std::size_t>(c) * static_cast<std::size_t>(c));
  std::vector<bool> estimated(tables.size(), false);
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * static_cast<std::size_t>(c) +
                              static_cast<std::size_t>(j);
      if (!bank.estimated(domain, i, j)) continue;
      const GaussianMixture& cell = bank.mixture(domain, i, j);
      const GaussianMixture& anchor = i == j ? bank.anchor_pos() : bank.anchor_neg();
      const std::vector<double>& z = cell.grid_z();
      const std::vector<double>& f = cell.grid_cdf();
      std::vector<double> delta(z.size());
      double prev_mapped = -std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < z.size(); ++g) {
        const double p = std::clamp(f[g], 1e-15, 1.0 - 1e-15);
        const double mapped = std::max(anchor.inverse_cdf(p), prev_mapped);
        prev_mapped = mapped;
        delta[g] = mapped - z[g];
      }
      tables[idx] = OffsetTable(z, std::move(delta));
      estimated[idx] = true;
    }
  }
  return OffsetEvaluator(c, std::move(tables), std::move(estimated));
}

/// Balanced prediction for one logit vector. Each candidate class c is scored
/// by the softmax probability of c after applying row c of the corrections
/// scaled by tau to every entry; the argmax of those candidate-conditional
/// scores is returned, ties toward the lower index. tau == 0 reduces to the
/// plain argmax.
inline int post_hoc_predict(const std::vector<double>& logits, const OffsetEvaluator& offsets,
                            double tau) {
  const int c = offsets.num_classes();
  if (static_cast<int>(logits.size()) != c)
    throw std::invalid_argument("post_hoc_predict: logit vector length mismatch");
  if (tau < 0.0) throw std::invalid_argument("post_hoc_predict: tau must be non-negative");
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<double> adjusted(static_cast<std::size_t>(c));
  for (int cand = 0; cand < c; ++cand) {
    for (int l = 0; l < c; ++l)
      adjusted[static_cast<std::size_t>(l)] =
          logits[static_cast<std::size_t>(l)] + tau * offsets.offset(cand, l, logits[static_cast<std::size_t>(l)]);
    const double top = *std::max_element(adjusted.begin(), adjusted.end());
    double denom = 0.0;
    for (double a : adjusted) denom += std::exp(a - top);
    const double score = adjusted[static_cast<std::size_t>(cand)] - top - std::log(denom);
    if (score > best_score) {
      best_score = score;
      best = cand;
    }
  }
  return best;
}

}  // namespace logitbal
