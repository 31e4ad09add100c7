#pragma once

#include <algorithm>
#include <concepts>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "logitbal/bank.hpp"
#include "logitbal/offsets.hpp"

namespace logitbal {

enum class QualityRule { kThreshold, kLinear };

struct LossConfig {
  double tau = 0.1;
  double lambda = 0.2;
  double p_threshold = 0.9;
  QualityRule quality_rule = QualityRule::kThreshold;

  void validate() const {
    if (tau < 0.0) throw std::invalid_argument("LossConfig: tau must be non-negative");
    if (lambda < 0.0) throw std::invalid_argument("LossConfig: lambda must be non-negative");
    if (!(p_threshold > 0.0 && p_threshold <= 1.0))
      throw std::invalid_argument("LossConfig: p_threshold must be in (0,1]");
  }
};

/// Pseudo-label quality weight from teacher confidence.
inline double quality_weight(double confidence, const LossConfig& cfg) {
  if (!(confidence >= 0.0 && confidence <= 1.0))
    throw std::invalid_argument("quality_weight: confidence must be in [0,1]");
  return cfg.quality_rule == QualityRule::kThreshold ? (confidence >= cfg.p_threshold ? 1.0 : 0.0)
                                                     : confidence;
}

struct LossGrad {
  double value = 0.0;
  std::vector<double> grad;
};

namespace detail {
inline void check_label(const std::vector<double>& logits, int label, const char* who) {
  if (logits.empty()) throw std::invalid_argument(std::string(who) + ": empty logit vector");
  if (label < 0 || label >= static_cast<int>(logits.size()))
    throw std::invalid_argument(std::string(who) + ": label out of range");
}

/// -log softmax(v)[label] and softmax(v) - one_hot(label), stabilized.
/// The non-max terms are summed apart from the leading 1 so saturated losses
/// keep full precision through log1p.
inline LossGrad softmax_nll(const std::vector<double>& v, int label) {
  const std::size_t top_idx =
      static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  const double top = v[top_idx];
  double rest = 0.0;
  for (std::size_t c = 0; c < v.size(); ++c)
    if (c != top_idx) rest += std::exp(v[c] - top);
  const double log_denom = top + std::log1p(rest);
  LossGrad out;
  out.value = (top - v[static_cast<std::size_t>(label)]) + std::log1p(rest);
  out.grad.resize(v.size());
  for (std::size_t c = 0; c < v.size(); ++c) out.grad[c] = std::exp(v[c] - log_denom);
  out.grad[static_cast<std::size_t>(label)] -= 1.0;
  return out;
}
}  // namespace detail

/// Plain cross-entropy over logits, with its gradient.
inline LossGrad ce_loss(const std::vector<double>& logits, int label) {
  detail::check_label(logits, label, "ce_loss");
  return detail::softmax_nll(logits, label);
}

/// Cross-entropy over correction-adjusted logits: entry c becomes
/// logits[c] - tau * delta(c, logits[c]) with delta the correction row of the
/// sample's (pseudo-)label. Corrections are evaluated at the incoming logits
/// and treated as constants in the backward pass, so the gradient is the
/// adjusted softmax minus the one-hot target, reported at the unadjusted
/// coordinates.
template <typename DeltaRow>
  requires std::invocable<DeltaRow&, int, double>
LossGrad adjusted_ce_loss(const std::vector<double>& logits, int label, DeltaRow&& delta, double tau) {
  detail::check_label(logits, label, "adjusted_ce_loss");
  if (tau < 0.0) throw std::invalid_argument("adjusted_ce_loss: tau must be non-negative");
  std::vector<double> adjusted(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c)
    adjusted[c] = logits[c] - tau * delta(static_cast<int>(c), logits[c]);
  return detail::softmax_nll(adjusted, label);
}

inline LossGrad adjusted_ce_loss(const std::vector<double>& logits, int label,
                                 const OffsetEvaluator& offsets, double tau) {
  return adjusted_ce_loss(logits, label,
                          [&](int c, double z) { return offsets.offset(label, c, z); }, tau);
}

/// The same loss written as cross-entropy with an adaptive margin:
/// log(1 + sum_{c != y} r_c^tau * exp(f[c] - f[y])) with
/// r_c = exp(delta(y, f[y])) / exp(delta(c, f[c])). Kept as an independent
/// evaluation route; it must agree with adjusted_ce_loss.
template <typename DeltaRow>
  requires std::invocable<DeltaRow&, int, double>
double margin_form_loss(const std::vector<double>& logits, int label, DeltaRow&& delta, double tau) {
  detail::check_label(logits, label, "margin_form_loss");
  if (tau < 0.0) throw std::invalid_argument("margin_form_loss: tau must be non-negative");
  const std::size_t y = static_cast<std::size_t>(label);
  const double own = delta(label, logits[y]);
  double acc = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    if (c == y) continue;
    const double ratio = std::exp(own) / std::exp(delta(static_cast<int>(c), logits[c]));
    acc += std::pow(ratio, tau) * std::exp(logits[c] - logits[y]);
  }
  return std::log1p(acc);
}

inline double margin_form_loss(const std::vector<double>& logits, int label,
                               const OffsetEvaluator& offsets, double tau) {
  return margin_form_loss(logits, label,
                          [&](int c, double z) { return offsets.offset(label, c, z); }, tau);
}

/// Pseudo-label branch: the adjusted cross-entropy gated by the quality
/// weight of the teacher confidence. Zero quality yields zero loss and
/// gradient without touching the corrections.
template <typename DeltaRow>
  requires std::invocable<DeltaRow&, int, double>
LossGrad target_loss(const std::vector<double>& logits, int pseudo_label, double confidence,
                     DeltaRow&& delta, const LossConfig& cfg) {
  detail::check_label(logits, pseudo_label, "target_loss");
  const double q = quality_weight(confidence, cfg);
  if (q == 0.0) return {0.0, std::vector<double>(logits.size(), 0.0)};
  LossGrad out = adjusted_ce_loss(logits, pseudo_label, delta, cfg.tau);
  out.value *= q;
  for (double& g : out.grad) g *= q;
  return out;
}

inline LossGrad target_loss(const std::vector<double>& logits, int pseudo_label, double confidence,
                            const OffsetEvaluator& offsets, const LossConfig& cfg) {
  return target_loss(logits, pseudo_label, confidence,
                     [&](int c, double z) { return offsets.offset(pseudo_label, c, z); }, cfg);
}

/// Cumulative density of a sample's own-class logit under its positive cell
/// mixture, clamped into (0,1). This is the regression head's training target.
inline double cde_target(const std::vector<double>& logits, int label, const GmmBank& bank,
                         Domain domain) {
  detail::check_label(logits, label, "cde_target");
  if (!bank.estimated(domain, label, label))
    throw std::runtime_error("cde_target: cell (" + std::to_string(label) + "," +
                             std::to_string(label) + ") not estimated for " + domain_name(domain));
  const double d = bank.mixture(domain, label, label).cdf(logits[static_cast<std::size_t>(label)]);
  return std::clamp(d, 1e-15, 1.0 - 1e-15);
}

/// Weighted squared error on a predicted cumulative density, with the
/// derivative with respect to the prediction.
inline std::pair<double, double> cde_regression_loss(double predicted, double target, double q) {
  if (!(target >= 0.0 && target <= 1.0))
    throw std::invalid_argument("cde_regression_loss: target must be in [0,1]");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("cde_regression_loss: q must be in [0,1]");
  const double diff = predicted - target;
  return {q * diff * diff, 2.0 * q * diff};
}

}  // namespace logitbal
