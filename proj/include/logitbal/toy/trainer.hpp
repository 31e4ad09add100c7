#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "logitbal/bank.hpp"
#include "logitbal/bias.hpp"
#include "logitbal/io/json_codec.hpp"
#include "logitbal/losses.hpp"
#include "logitbal/metrics.hpp"
#include "logitbal/offsets.hpp"
#include "logitbal/toy/model.hpp"
#include "logitbal/toy/spec.hpp"

namespace logitbal::toy {

/// Everything one training run needs besides the data construction.
struct RunSettings {
  EmConfig em;
  LossConfig loss;
  double ema = 0.999;
  std::size_t n_min = 100;
  std::size_t cell_cap = 10000;
  std::size_t mc_samples = 50000;
  int iterations = 2000;
  int batch_size = 256;
  double learning_rate = 0.1;
  int warmup_iters = 0;
  int eval_every = 100;
  ModelConfig model;
  std::uint64_t seed = 0;

  void validate() const {
    em.validate();
    loss.validate();
    if (ema < 0.0 || ema >= 1.0) throw std::invalid_argument("RunSettings: ema must be in [0,1)");
    if (n_min == 0) throw std::invalid_argument("RunSettings: n_min must be positive");
    if (cell_cap == 0) throw std::invalid_argument("RunSettings: cell_cap must be positive");
    if (iterations < 1) throw std::invalid_argument("RunSettings: iterations must be positive");
    if (batch_size < 1) throw std::invalid_argument("RunSettings: batch_size must be positive");
    if (learning_rate <= 0.0) throw std::invalid_argument("RunSettings: learning_rate must be positive");
    if (eval_every < 1) throw std::invalid_argument("RunSettings: eval_every must be positive");
  }

  /// This run with the adjustment fully disabled: the plain self-training
  /// baseline on the same schedule, seeds and machinery.
  RunSettings baseline() const {
    RunSettings b = *this;
    b.loss.tau = 0.0;
    b.loss.lambda = 0.0;
    return b;
  }
};

struct HistoryRow {
  int iteration = 0;
  double source_loss = 0.0;
  double target_loss = 0.0;
  double reg_loss = 0.0;
  double macc = 0.0;
  double miou = 0.0;
  double max_abs_bias = 0.0;
  double mean_ks_pos = std::numeric_limits<double>::quiet_NaN();
};

/// The self-training loop: every iteration forwards one minibatch per
/// domain, pseudo-labels the target batch with the EMA teacher, streams the
/// student logits into the per-domain logit-set matrices, refreshes the GMM
/// bank and anchors from cell samples, rebuilds the correction tables, and
/// takes one SGD step on the corrected objective. tau = lambda = 0 turns the
/// whole adjustment off without touching the random streams, which makes
/// baseline and adjusted runs exactly pairable per seed.
class Trainer {
 public:
  Trainer(const DomainSpec& dspec, const RunSettings& s)
      : dspec_(dspec),
        s_(s),
        data_(generate_domains(dspec)),
        model_(s.model, dspec.num_classes, dspec.feature_dim, derive_seed(s.seed, 0x401)),
        bank_(dspec.num_classes, s.em, s.n_min),
        source_matrix_(dspec.num_classes, s.cell_cap, derive_seed(s.seed, 0x402)),
        target_matrix_(dspec.num_classes, s.cell_cap, derive_seed(s.seed, 0x403)),
        batch_rng_(derive_seed(s.seed, 0x404)),
        source_offsets_(OffsetEvaluator::identity(dspec.num_classes)),
        target_offsets_(OffsetEvaluator::identity(dspec.num_classes)) {
    s_.validate();
  }

  int iteration() const { return iteration_; }
  const DomainSpec& domain_spec() const { return dspec_; }
  const RunSettings& settings() const { return s_; }
  const ToyData& data() const { return data_; }
  const ToyModel& model() const { return model_; }
  const GmmBank& bank() const { return bank_; }
  const std::vector<HistoryRow>& history() const { return history_; }

  void step() {
    const int c = dspec_.num_classes;
    const std::size_t batch = static_cast<std::size_t>(s_.batch_size);

    std::vector<std::size_t> src_idx(batch), tgt_idx(batch);
    for (auto& i : src_idx) i = static_cast<std::size_t>(batch_rng_.below(data_.source_train.size()));
    for (auto& i : tgt_idx) i = static_cast<std::size_t>(batch_rng_.below(data_.target_train.size()));

    std::vector<std::vector<double>> src_logits(batch), tgt_logits(batch);
    std::vector<int> pseudo(batch);
    std::vector<double> confidence(batch);
    std::vector<int> src_counts(static_cast<std::size_t>(c), 0), tgt_counts(static_cast<std::size_t>(c), 0);

    for (std::size_t b = 0; b < batch; ++b) {
      const auto& x = data_.source_train.features[src_idx[b]];
      src_logits[b] = model_.student_logits(x);
      ++src_counts[static_cast<std::size_t>(data_.source_train.labels[src_idx[b]])];
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& x = data_.target_train.features[tgt_idx[b]];
      tgt_logits[b] = model_.student_logits(x);
      const auto teacher = model_.teacher_logits(x);
      pseudo[b] = argmax_class(teacher);
      confidence[b] = teacher_confidence(teacher);
      ++tgt_counts[static_cast<std::size_t>(pseudo[b])];
    }

    // stream the batch into the per-domain logit-set matrices
    for (std::size_t b = 0; b < batch; ++b)
      source_matrix_.add(data_.source_train.labels[src_idx[b]], src_logits[b]);
    for (std::size_t b = 0; b < batch; ++b)
      if (quality_weight(confidence[b], s_.loss) > 0.0) target_matrix_.add(pseudo[b], tgt_logits[b]);

    // refresh the bank: per-cell draw count follows the smallest class count
    // in the minibatch, floored at n_min
    update_domain(Domain::kSource, source_matrix_, batch_count_min(src_counts));
    update_domain(Domain::kTarget, target_matrix_, batch_count_min(tgt_counts));
    if (bank_.anchors_estimated()) {
      source_offsets_ = build_offsets(bank_, Domain::kSource);
      target_offsets_ = build_offsets(bank_, Domain::kTarget);
    }

    // corrected objective and one SGD step
    std::vector<double> scorer_grad(model_.scorer_size(), 0.0);
    std::vector<double> head_grad(model_.head_size(), 0.0);
    std::vector<double> dlogits(static_cast<std::size_t>(c));
    const double inv_batch = 1.0 / static_cast<double>(batch);
    double src_loss = 0.0, tgt_loss = 0.0, reg_loss = 0.0;

    for (std::size_t b = 0; b < batch; ++b) {
      const auto& x = data_.source_train.features[src_idx[b]];
      const int y = data_.source_train.labels[src_idx[b]];
      const LossGrad lg = adjusted_ce_loss(src_logits[b], y, source_offsets_, s_.loss.tau);
      src_loss += lg.value;
      for (std::size_t k = 0; k < dlogits.size(); ++k) dlogits[k] = lg.grad[k] * inv_batch;
      double dhead = 0.0;
      if (s_.loss.lambda > 0.0 && bank_.estimated(Domain::kSource, y, y)) {
        const double d_true = cde_target(src_logits[b], y, bank_, Domain::kSource);
        const auto [rl, dd] = cde_regression_loss(model_.head_value(x), d_true, 1.0);
        reg_loss += rl;
        dhead = s_.loss.lambda * dd * inv_batch;
      }
      model_.accumulate(x, dlogits, dhead, scorer_grad, head_grad);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& x = data_.target_train.features[tgt_idx[b]];
      const int y = pseudo[b];
      const double q = quality_weight(confidence[b], s_.loss);
      if (q <= 0.0) continue;
      const LossGrad lg = target_loss(tgt_logits[b], y, confidence[b], target_offsets_, s_.loss);
      tgt_loss += lg.value;
      for (std::size_t k = 0; k < dlogits.size(); ++k) dlogits[k] = lg.grad[k] * inv_batch;
      double dhead = 0.0;
      if (s_.loss.lambda > 0.0 && bank_.estimated(Domain::kTarget, y, y)) {
        const double d_true = cde_target(tgt_logits[b], y, bank_, Domain::kTarget);
        const auto [rl, dd] = cde_regression_loss(model_.head_value(x), d_true, q);
        reg_loss += rl;
        dhead = s_.loss.lambda * dd * inv_batch;
      }
      model_.accumulate(x, dlogits, dhead, scorer_grad, head_grad);
    }

    model_.sgd_step(scorer_grad, head_grad, current_lr());
    model_.ema_update(s_.ema);

    loss_acc_src_ += src_loss * inv_batch;
    loss_acc_tgt_ += tgt_loss * inv_batch;
    loss_acc_reg_ += s_.loss.lambda * reg_loss * inv_batch;
    ++loss_acc_count_;
    ++iteration_;
  }

  /// Steps until the given iteration (capped at the configured total),
  /// recording a history row every eval_every iterations and at the end.
  /// History positions depend only on the schedule, so interrupting at any
  /// point and resuming from a snapshot yields the same rows.
  void run_until(int stop_iteration) {
    const int stop = std::min(stop_iteration, s_.iterations);
    while (iteration_ < stop) {
      step();
      if (iteration_ % s_.eval_every == 0 || iteration_ == s_.iterations) record_history();
    }
  }

  void run() { run_until(s_.iterations); }

  // --- evaluation over the held-out target set ---

  EvalTally eval_tally() const {
    EvalTally t(dspec_.num_classes);
    for (std::size_t i = 0; i < data_.target_eval.size(); ++i)
      t.record(data_.target_eval.labels[i], argmax_class(model_.student_logits(data_.target_eval.features[i])));
    return t;
  }

  LogitBatch eval_logit_batch() const {
    LogitBatch batch;
    batch.num_classes = dspec_.num_classes;
    for (std::size_t i = 0; i < data_.target_eval.size(); ++i)
      batch.records.push_back({model_.student_logits(data_.target_eval.features[i]),
                               data_.target_eval.labels[i], Domain::kTarget, 1.0});
    return batch;
  }

  std::vector<double> eval_bias() const { return empirical_bias(eval_logit_batch(), dspec_.num_classes); }

  /// Mean Kolmogorov-Smirnov distance between the held-out per-class positive
  /// logit samples and the current positive anchor. NaN until anchors exist.
  double mean_ks_to_anchor() const {
    if (!bank_.anchors_estimated()) return std::numeric_limits<double>::quiet_NaN();
    const int c = dspec_.num_classes;
    std::vector<std::vector<double>> per_class(static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < data_.target_eval.size(); ++i) {
      const int y = data_.target_eval.labels[i];
      per_class[static_cast<std::size_t>(y)].push_back(
          model_.student_logits(data_.target_eval.features[i])[static_cast<std::size_t>(y)]);
    }
    double acc = 0.0;
    int counted = 0;
    for (auto& samples : per_class) {
      if (samples.size() < 20) continue;
      std::sort(samples.begin(), samples.end());
      const double n = static_cast<double>(samples.size());
      double d = 0.0;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = bank_.anchor_pos().cdf(samples[i]);
        d = std::max(d, std::abs(f - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
      }
      acc += d;
      ++counted;
    }
    return counted > 0 ? acc / counted : std::numeric_limits<double>::quiet_NaN();
  }

  // --- snapshot / resume ---

  io::json snapshot() const {
    io::json j;
    j["iteration"] = iteration_;
    j["student"] = model_.student();
    j["teacher"] = model_.teacher();
    j["head"] = model_.head();
    j["bank"] = io::bank_to_json(bank_);
    j["source_matrix"] = io::matrix_to_json(source_matrix_);
    j["target_matrix"] = io::matrix_to_json(target_matrix_);
    j["batch_rng"] = batch_rng_.state();
    j["loss_acc"] = {loss_acc_src_, loss_acc_tgt_, loss_acc_reg_, static_cast<double>(loss_acc_count_)};
    io::json rows = io::json::array();
    for (const auto& r : history_)
      rows.push_back({r.iteration, r.source_loss, r.target_loss, r.reg_loss, r.macc, r.miou,
                      r.max_abs_bias, r.mean_ks_pos});
    j["history"] = std::move(rows);
    return j;
  }

  void restore(const io::json& j) {
    iteration_ = j.at("iteration").get<int>();
    model_.restore(j.at("student").get<std::vector<double>>(), j.at("teacher").get<std::vector<double>>(),
                   j.at("head").get<std::vector<double>>());
    bank_ = io::bank_from_json(j.at("bank"));
    source_matrix_ = io::matrix_from_json(j.at("source_matrix"));
    target_matrix_ = io::matrix_from_json(j.at("target_matrix"));
    batch_rng_.restore_state(j.at("batch_rng").get<std::string>());
    const auto& acc = j.at("loss_acc");
    loss_acc_src_ = acc[0].get<double>();
    loss_acc_tgt_ = acc[1].get<double>();
    loss_acc_reg_ = acc[2].get<double>();
    loss_acc_count_ = static_cast<int>(acc[3].get<double>());
    history_.clear();
    for (const auto& r : j.at("history"))
      history_.push_back({r[0].get<int>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>(),
                          r[4].get<double>(), r[5].get<double>(), r[6].get<double>(), r[7].get<double>()});
    if (bank_.anchors_estimated()) {
      source_offsets_ = build_offsets(bank_, Domain::kSource);
      target_offsets_ = build_offsets(bank_, Domain::kTarget);
    } else {
      source_offsets_ = OffsetEvaluator::identity(dspec_.num_classes);
      target_offsets_ = OffsetEvaluator::identity(dspec_.num_classes);
    }
  }

 private:
  static double teacher_confidence(const std::vector<double>& logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - top);
    return 1.0 / denom;  // exp(top - top) / sum == max softmax probability
  }

  std::size_t batch_count_min(const std::vector<int>& counts) const {
    int smallest = std::numeric_limits<int>::max();
    for (int n : counts)
      if (n > 0) smallest = std::min(smallest, n);
    if (smallest == std::numeric_limits<int>::max()) smallest = 0;
    return std::max(s_.n_min, static_cast<std::size_t>(smallest));
  }

  void update_domain(Domain d, const LogitSetMatrix& matrix, std::size_t n_sample) {
    const std::uint64_t stream = d == Domain::kSource ? 0x601 : 0x602;
    const CellSamples samples = sample_cells(matrix, s_.n_min, n_sample,
                                             derive_seed(s_.seed, stream, static_cast<std::uint64_t>(iteration_)));
    update_bank(bank_, d, samples, s_.em);
  }

  double current_lr() const {
    if (s_.warmup_iters > 0 && iteration_ < s_.warmup_iters)
      return s_.learning_rate * static_cast<double>(iteration_ + 1) / static_cast<double>(s_.warmup_iters);
    return s_.learning_rate;
  }

  void record_history() {
    HistoryRow row;
    row.iteration = iteration_;
    const double n = loss_acc_count_ > 0 ? static_cast<double>(loss_acc_count_) : 1.0;
    row.source_loss = loss_acc_src_ / n;
    row.target_loss = loss_acc_tgt_ / n;
    row.reg_loss = loss_acc_reg_ / n;
    loss_acc_src_ = loss_acc_tgt_ = loss_acc_reg_ = 0.0;
    loss_acc_count_ = 0;
    const MetricSummary ms = summary(eval_tally());
    row.macc = ms.macc;
    row.miou = ms.miou;
    const auto bias = eval_bias();
    for (double b : bias) row.max_abs_bias = std::max(row.max_abs_bias, std::abs(b));
    row.mean_ks_pos = mean_ks_to_anchor();
    history_.push_back(row);
  }

  DomainSpec dspec_;
  RunSettings s_;
  ToyData data_;
  ToyModel model_;
  GmmBank bank_;
  LogitSetMatrix source_matrix_;
  LogitSetMatrix target_matrix_;
  RandomEngine batch_rng_;
  OffsetEvaluator source_offsets_;
  OffsetEvaluator target_offsets_;
  int iteration_ = 0;
  std::vector<HistoryRow> history_;
  double loss_acc_src_ = 0.0, loss_acc_tgt_ = 0.0, loss_acc_reg_ = 0.0;
  int loss_acc_count_ = 0;
};

/// Final state of one trained variant plus everything the reports need.
struct VariantResult {
  std::string name;
  std::vector<HistoryRow> history;
  MetricSummary metrics;
  PerClassMetrics per_class;
  std::vector<double> empirical_bias;
  std::vector<double> distributional_bias;  // empty if the target bank is incomplete
  double max_abs_bias = 0.0;
  std::vector<int> eval_labels;
  std::vector<int> eval_predictions;
  io::json bank_json;
};

struct RunReport {
  DomainSpec spec;
  RunSettings settings;
  VariantResult baseline;
  VariantResult adjusted;
};

namespace detail {
inline VariantResult finish_variant(Trainer& t, std::string name) {
  VariantResult r;
  r.name = std::move(name);
  r.history = t.history();
  const EvalTally tally = t.eval_tally();
  r.metrics = summary(tally);
  r.per_class = per_class_metrics(tally);
  r.empirical_bias = t.eval_bias();
  for (double b : r.empirical_bias) r.max_abs_bias = std::max(r.max_abs_bias, std::abs(b));
  if (t.bank().all_estimated(Domain::kTarget))
    r.distributional_bias = distributional_bias(t.bank(), Domain::kTarget, t.settings().mc_samples,
                                                derive_seed(t.settings().seed, 0x777));
  r.eval_labels = t.data().target_eval.labels;
  for (const auto& x : t.data().target_eval.features)
    r.eval_predictions.push_back(argmax_class(t.model().student_logits(x)));
  r.bank_json = io::bank_to_json(t.bank());
  return r;
}
}  // namespace detail

/// Trains the plain self-training baseline and the adjusted variant under
/// identical seeds and schedules, then evaluates both on the held-out target
/// set.
inline RunReport run_experiment(const DomainSpec& dspec, const RunSettings& settings) {
  RunReport report;
  report.spec = dspec;
  report.settings = settings;
  {
    Trainer base(dspec, settings.baseline());
    base.run();
    report.baseline = detail::finish_variant(base, "baseline");
  }
  {
    Trainer adj(dspec, settings);
    adj.run();
    report.adjusted = detail::finish_variant(adj, "adjusted");
  }
  return report;
}

}  // namespace logitbal::toy
