#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "logitbal/random.hpp"

namespace logitbal::toy {

enum class ScorerKind { kLinear, kHidden };

struct ModelConfig {
  ScorerKind kind = ScorerKind::kLinear;
  int hidden_width = 16;
  double init_scale = 0.1;
};

/// Differentiable toy scorer with manual gradients: a linear (or single
/// tanh-hidden-layer) class scorer, an EMA teacher copy of it, and a scalar
/// regression head that reads the scorer's features (the raw input for the
/// linear scorer, the hidden activations otherwise).
class ToyModel {
 public:
  ToyModel(const ModelConfig& cfg, int num_classes, int feature_dim, std::uint64_t seed)
      : cfg_(cfg), num_classes_(num_classes), feature_dim_(feature_dim) {
    if (num_classes < 2) throw std::invalid_argument("ToyModel: need at least 2 classes");
    if (feature_dim < 1) throw std::invalid_argument("ToyModel: feature_dim must be positive");
    if (cfg.kind == ScorerKind::kHidden && cfg.hidden_width < 1)
      throw std::invalid_argument("ToyModel: hidden_width must be positive");
    const std::size_t c = static_cast<std::size_t>(num_classes);
    const std::size_t d = static_cast<std::size_t>(feature_dim);
    const std::size_t h = static_cast<std::size_t>(cfg.hidden_width);
    scorer_size_ = cfg.kind == ScorerKind::kLinear ? c * d + c : h * d + h + c * h + c;
    head_size_ = (cfg.kind == ScorerKind::kLinear ? d : h) + 1;
    RandomEngine rng(derive_seed(seed, 0x30de1));
    student_.resize(scorer_size_);
    for (auto& w : student_) w = cfg.init_scale * rng.normal();
    teacher_ = student_;
    head_.resize(head_size_);
    for (auto& w : head_) w = cfg.init_scale * rng.normal();
  }

  int num_classes() const { return num_classes_; }
  int feature_dim() const { return feature_dim_; }
  const ModelConfig& config() const { return cfg_; }
  std::size_t scorer_size() const { return scorer_size_; }
  std::size_t head_size() const { return head_size_; }
  const std::vector<double>& student() const { return student_; }
  const std::vector<double>& teacher() const { return teacher_; }
  const std::vector<double>& head() const { return head_; }

  std::vector<double> student_logits(const std::vector<double>& x) const {
    return forward(student_, x);
  }
  std::vector<double> teacher_logits(const std::vector<double>& x) const {
    return forward(teacher_, x);
  }

  /// Regression head output on the student's features.
  double head_value(const std::vector<double>& x) const {
    const std::vector<double>& f = cfg_.kind == ScorerKind::kLinear ? x : hidden(student_, x);
    double v = head_.back();
    for (std::size_t j = 0; j < f.size(); ++j) v += head_[j] * f[j];
    return v;
  }

  /// Adds one sample's contribution to the flat gradient buffers, given the
  /// loss derivatives with respect to the student logits and the head output.
  void accumulate(const std::vector<double>& x, const std::vector<double>& dlogits, double dhead,
                  std::vector<double>& scorer_grad, std::vector<double>& head_grad) const {
    check_input(x);
    if (dlogits.size() != static_cast<std::size_t>(num_classes_))
      throw std::invalid_argument("ToyModel::accumulate: dlogits size mismatch");
    if (scorer_grad.size() != scorer_size_ || head_grad.size() != head_size_)
      throw std::invalid_argument("ToyModel::accumulate: gradient buffer size mismatch");
    const std::size_t c = static_cast<std::size_t>(num_classes_);
    const std::size_t d = static_cast<std::size_t>(feature_dim_);
    if (cfg_.kind == ScorerKind::kLinear) {
      for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < d; ++j) scorer_grad[i * d + j] += dlogits[i] * x[j];
        scorer_grad[c * d + i] += dlogits[i];
      }
      for (std::size_t j = 0; j < d; ++j) head_grad[j] += dhead * x[j];
      head_grad[d] += dhead;
      return;
    }
    const std::size_t h = static_cast<std::size_t>(cfg_.hidden_width);
    const std::vector<double> a = hidden(student_, x);
    const double* w_out = student_.data() + h * d + h;  // C x H block
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t k = 0; k < h; ++k) scorer_grad[h * d + h + i * h + k] += dlogits[i] * a[k];
      scorer_grad[h * d + h + c * h + i] += dlogits[i];
    }
    for (std::size_t k = 0; k < h; ++k) {
      double da = dhead * head_[k];
      for (std::size_t i = 0; i < c; ++i) da += dlogits[i] * w_out[i * h + k];
      const double dpre = da * (1.0 - a[k] * a[k]);
      for (std::size_t j = 0; j < d; ++j) scorer_grad[k * d + j] += dpre * x[j];
      scorer_grad[h * d + k] += dpre;
      head_grad[k] += dhead * a[k];
    }
    head_grad[h] += dhead;
  }

  void sgd_step(const std::vector<double>& scorer_grad, const std::vector<double>& head_grad,
                double lr) {
    for (std::size_t i = 0; i < scorer_size_; ++i) student_[i] -= lr * scorer_grad[i];
    for (std::size_t i = 0; i < head_size_; ++i) head_[i] -= lr * head_grad[i];
  }

  void ema_update(double coeff) {
    if (coeff < 0.0 || coeff >= 1.0) throw std::invalid_argument("ToyModel: ema coefficient must be in [0,1)");
    for (std::size_t i = 0; i < scorer_size_; ++i)
      teacher_[i] = coeff * teacher_[i] + (1.0 - coeff) * student_[i];
  }

  void restore(std::vector<double> student, std::vector<double> teacher, std::vector<double> head) {
    if (student.size() != scorer_size_ || teacher.size() != scorer_size_ || head.size() != head_size_)
      throw std::invalid_argument("ToyModel::restore: parameter size mismatch");
    student_ = std::move(student);
    teacher_ = std::move(teacher);
    head_ = std::move(head);
  }

 private:
  void check_input(const std::vector<double>& x) const {
    if (x.size() != static_cast<std::size_t>(feature_dim_))
      throw std::invalid_argument("ToyModel: feature dimension mismatch");
  }

  std::vector<double> hidden(const std::vector<double>& params, const std::vector<double>& x) const {
    const std::size_t d = static_cast<std::size_t>(feature_dim_);
    const std::size_t h = static_cast<std::size_t>(cfg_.hidden_width);
    std::vector<double> a(h);
    for (std::size_t k = 0; k < h; ++k) {
      double pre = params[h * d + k];
      for (std::size_t j = 0; j < d; ++j) pre += params[k * d + j] * x[j];
      a[k] = std::tanh(pre);
    }
    return a;
  }

  std::vector<double> forward(const std::vector<double>& params, const std::vector<double>& x) const {
    check_input(x);
    const std::size_t c = static_cast<std::size_t>(num_classes_);
    const std::size_t d = static_cast<std::size_t>(feature_dim_);
    std::vector<double> logits(c);
    if (cfg_.kind == ScorerKind::kLinear) {
      for (std::size_t i = 0; i < c; ++i) {
        double v = params[c * d + i];
        for (std::size_t j = 0; j < d; ++j) v += params[i * d + j] * x[j];
        logits[i] = v;
      }
      return logits;
    }
    const std::size_t h = static_cast<std::size_t>(cfg_.hidden_width);
    const std::vector<double> a = hidden(params, x);
    const double* w_out = params.data() + h * d + h;
    for (std::size_t i = 0; i < c; ++i) {
      double v = params[h * d + h + c * h + i];
      for (std::size_t k = 0; k < h; ++k) v += w_out[i * h + k] * a[k];
      logits[i] = v;
    }
    return logits;
  }

  ModelConfig cfg_;
  int num_classes_;
  int feature_dim_;
  std::size_t scorer_size_ = 0;
  std::size_t head_size_ = 0;
  std::vector<double> student_;
  std::vector<double> teacher_;
  std::vector<double> head_;
};

}  // namespace logitbal::toy
