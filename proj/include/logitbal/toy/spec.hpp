#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "logitbal/random.hpp"

namespace logitbal::toy {

/// Isotropic Gaussian feature generator for one class.
struct ClassGenerator {
  std::vector<double> mean;
  double std_dev = 1.0;
};

/// Synthetic two-domain construction: class priors and feature generators for
/// the source domain, plus a per-class mean translation and a std multiplier
/// describing the target domain.
struct DomainSpec {
  int num_classes = 5;
  int feature_dim = 2;
  std::vector<double> source_priors;
  std::vector<double> target_priors;
  std::vector<ClassGenerator> generators;
  std::vector<std::vector<double>> target_shift;  // per-class translation, C x d
  double target_std_scale = 1.0;
  int n_source = 20000;
  int n_target = 20000;
  int n_eval = 5000;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("DomainSpec: need at least 2 classes");
    if (feature_dim < 1) throw std::invalid_argument("DomainSpec: feature_dim must be positive");
    for (const auto* priors : {&source_priors, &target_priors}) {
      if (static_cast<int>(priors->size()) != num_classes)
        throw std::invalid_argument("DomainSpec: one prior per class required");
      double total = 0.0;
      for (double p : *priors) {
        if (p < 0.0) throw std::invalid_argument("DomainSpec: negative prior");
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("DomainSpec: priors must sum to 1");
    }
    if (static_cast<int>(generators.size()) != num_classes)
      throw std::invalid_argument("DomainSpec: one generator per class required");
    for (const auto& g : generators) {
      if (static_cast<int>(g.mean.size()) != feature_dim)
        throw std::invalid_argument("DomainSpec: generator mean dimension mismatch");
      if (g.std_dev < 0.0) throw std::invalid_argument("DomainSpec: negative generator std");
      for (double m : g.mean)
        if (!std::isfinite(m)) throw std::invalid_argument("DomainSpec: non-finite generator mean");
    }
    if (static_cast<int>(target_shift.size()) != num_classes)
      throw std::invalid_argument("DomainSpec: one shift per class required");
    for (const auto& s : target_shift)
      if (static_cast<int>(s.size()) != feature_dim)
        throw std::invalid_argument("DomainSpec: shift dimension mismatch");
    if (target_std_scale <= 0.0) throw std::invalid_argument("DomainSpec: target_std_scale must be positive");
    if (n_source < 1 || n_target < 1 || n_eval < 1)
      throw std::invalid_argument("DomainSpec: sample counts must be positive");
  }

  /// Skewed-prior, shifted-domain default: a dominant head class with two
  /// overlapping tail classes, uniform target priors and a mild per-class
  /// translation, so unweighted training exhibits measurable class bias.
  static DomainSpec default_spec() {
    DomainSpec s;
    s.num_classes = 3;
    s.feature_dim = 2;
    s.source_priors = {0.9, 0.05, 0.05};
    s.target_priors = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    s.generators = {{{0.0, 0.0}, 0.9}, {{1.6, 0.0}, 0.9}, {{0.0, 1.6}, 0.9}};
    s.target_shift = {{0.3, 0.3}, {0.5, 0.2}, {0.2, 0.5}};
    s.target_std_scale = 1.1;
    s.n_source = 20000;
    s.n_target = 20000;
    s.n_eval = 5000;
    return s;
  }
};

struct LabeledSet {
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  std::size_t size() const { return features.size(); }
};

/// Training view of the target domain: no label field exists, so no
/// training-path code can read target ground truth.
struct UnlabeledSet {
  std::vector<std::vector<double>> features;
  std::size_t size() const { return features.size(); }
};

struct ToyData {
  LabeledSet source_train;
  LabeledSet source_eval;
  UnlabeledSet target_train;
  LabeledSet target_eval;  // held out; labels used only by evaluation
};

namespace detail {
inline void draw_set(RandomEngine& rng, const DomainSpec& spec, bool target, int n,
                     std::vector<std::vector<double>>& features, std::vector<int>* labels) {
  features.reserve(static_cast<std::size_t>(n));
  const auto& priors = target ? spec.target_priors : spec.source_priors;
  for (int i = 0; i < n; ++i) {
    const int y = static_cast<int>(rng.pick(priors));
    const auto& gen = spec.generators[static_cast<std::size_t>(y)];
    const double sd = gen.std_dev * (target ? spec.target_std_scale : 1.0);
    std::vector<double> x(static_cast<std::size_t>(spec.feature_dim));
    for (int d = 0; d < spec.feature_dim; ++d) {
      const double base = gen.mean[static_cast<std::size_t>(d)] +
                          (target ? spec.target_shift[static_cast<std::size_t>(y)][static_cast<std::size_t>(d)] : 0.0);
      x[static_cast<std::size_t>(d)] = base + sd * rng.normal();
    }
    features.push_back(std::move(x));
    if (labels) labels->push_back(y);
  }
}
}  // namespace detail

/// Seeded draw of all four sample sets. Target training labels are never
/// materialized; the held-out sets exist only for evaluation.
inline ToyData generate_domains(const DomainSpec& spec) {
  spec.validate();
  ToyData data;
  RandomEngine src_rng(derive_seed(spec.seed, 0x50a1));
  detail::draw_set(src_rng, spec, false, spec.n_source, data.source_train.features, &data.source_train.labels);
  RandomEngine src_eval_rng(derive_seed(spec.seed, 0x50a2));
  detail::draw_set(src_eval_rng, spec, false, spec.n_eval, data.source_eval.features, &data.source_eval.labels);
  RandomEngine tgt_rng(derive_seed(spec.seed, 0x7a01));
  detail::draw_set(tgt_rng, spec, true, spec.n_target, data.target_train.features, nullptr);
  RandomEngine tgt_eval_rng(derive_seed(spec.seed, 0x7a02));
  detail::draw_set(tgt_eval_rng, spec, true, spec.n_eval, data.target_eval.features, &data.target_eval.labels);
  return data;
}

}  // namespace logitbal::toy
