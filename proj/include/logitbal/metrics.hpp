#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace logitbal {

/// C x C confusion counts: counts(c, l) = samples of true class c predicted
/// as l. Tallies merge by entrywise addition.
class EvalTally {
 public:
  explicit EvalTally(int num_classes)
      : num_classes_(num_classes),
        counts_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes), 0) {
    if (num_classes <= 0) throw std::invalid_argument("EvalTally: num_classes must be positive");
  }

  int num_classes() const { return num_classes_; }
  std::uint64_t counts(int truth, int pred) const { return counts_[index(truth, pred)]; }

  void record(int truth, int pred, std::uint64_t n = 1) { counts_[index(truth, pred)] += n; }

  void merge(const EvalTally& other) {
    if (other.num_classes_ != num_classes_) throw std::invalid_argument("EvalTally::merge: size mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }

  std::uint64_t row_total(int truth) const {
    std::uint64_t t = 0;
    for (int l = 0; l < num_classes_; ++l) t += counts(truth, l);
    return t;
  }

  std::uint64_t col_total(int pred) const {
    std::uint64_t t = 0;
    for (int c = 0; c < num_classes_; ++c) t += counts(c, pred);
    return t;
  }

 private:
  std::size_t index(int truth, int pred) const {
    if (truth < 0 || truth >= num_classes_ || pred < 0 || pred >= num_classes_)
      throw std::invalid_argument("EvalTally: class index out of range");
    return static_cast<std::size_t>(truth) * static_cast<std::size_t>(num_classes_) +
           static_cast<std::size_t>(pred);
  }

  int num_classes_;
  std::vector<std::uint64_t> counts_;
};

/// Per-class recall and intersection-over-union. Classes with an empty
/// denominator are reported as nullopt and excluded from the means.
struct PerClassMetrics {
  std::vector<std::optional<double>> acc;
  std::vector<std::optional<double>> iou;
  int undefined_count = 0;
};

inline PerClassMetrics per_class_metrics(const EvalTally& t) {
  const int c = t.num_classes();
  PerClassMetrics out;
  out.acc.resize(static_cast<std::size_t>(c));
  out.iou.resize(static_cast<std::size_t>(c));
  for (int i = 0; i < c; ++i) {
    const auto diag = t.counts(i, i);
    const auto row = t.row_total(i);
    const auto uni = row + t.col_total(i) - diag;
    const std::size_t ix = static_cast<std::size_t>(i);
    if (row > 0) out.acc[ix] = static_cast<double>(diag) / static_cast<double>(row);
    if (uni > 0) out.iou[ix] = static_cast<double>(diag) / static_cast<double>(uni);
    if (row == 0 || uni == 0) ++out.undefined_count;
  }
  return out;
}

struct MetricSummary {
  double miou = 0.0;
  double macc = 0.0;
  double std_iou = 0.0;
  double std_acc = 0.0;
  int defined_iou = 0;
  int defined_acc = 0;
};

namespace detail {
inline std::pair<double, double> mean_and_pop_std(const std::vector<std::optional<double>>& xs, int* count) {
  double sum = 0.0;
  int n = 0;
  for (const auto& x : xs)
    if (x) {
      sum += *x;
      ++n;
    }
  *count = n;
  if (n == 0) return {0.0, 0.0};
  const double mean = sum / n;
  double var = 0.0;
  for (const auto& x : xs)
    if (x) var += (*x - mean) * (*x - mean);
  return {mean, std::sqrt(var / n)};
}
}  // namespace detail

/// Unweighted means and population standard deviations over defined classes.
inline MetricSummary summary(const EvalTally& t) {
  const PerClassMetrics pc = per_class_metrics(t);
  MetricSummary s;
  std::tie(s.miou, s.std_iou) = detail::mean_and_pop_std(pc.iou, &s.defined_iou);
  std::tie(s.macc, s.std_acc) = detail::mean_and_pop_std(pc.acc, &s.defined_acc);
  return s;
}

/// Multiplies every row by its class factor, rounding to the nearest count
/// and keeping nonzero entries at one or more. Mean accuracy is invariant to
/// this (sample counts cancel per row); mean IoU generally is not.
inline EvalTally scale_class_counts(const EvalTally& t, const std::vector<double>& factors) {
  if (static_cast<int>(factors.size()) != t.num_classes())
    throw std::invalid_argument("scale_class_counts: one factor per class required");
  for (double f : factors)
    if (!(f > 0.0)) throw std::invalid_argument("scale_class_counts: factors must be positive");
  EvalTally out(t.num_classes());
  for (int i = 0; i < t.num_classes(); ++i) {
    for (int j = 0; j < t.num_classes(); ++j) {
      const std::uint64_t n = t.counts(i, j);
      if (n == 0) continue;
      const double scaled = static_cast<double>(n) * factors[static_cast<std::size_t>(i)];
      out.record(i, j, std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(scaled))));
    }
  }
  return out;
}

}  // namespace logitbal
