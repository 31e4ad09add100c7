#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "logitbal/bank.hpp"
#include "logitbal/logit_data.hpp"
#include "logitbal/random.hpp"

namespace logitbal {

/// Held-out prediction bias per class: the average over true classes of the
/// empirical probability of predicting class l, minus the uniform rate 1/C.
/// Positive entries mark over-predicted classes. Every class must appear at
/// least once among the labeled records.
inline std::vector<double> empirical_bias(const LogitBatch& batch, int num_classes) {
  if (num_classes <= 0) throw std::invalid_argument("empirical_bias: num_classes must be positive");
  if (batch.num_classes != num_classes)
    throw std::invalid_argument("empirical_bias: batch class count mismatch");
  batch.validate();
  const std::size_t c = static_cast<std::size_t>(num_classes);
  std::vector<std::vector<double>> pred_counts(c, std::vector<double>(c, 0.0));
  std::vector<double> row_totals(c, 0.0);
  for (const auto& r : batch.records) {
    if (r.label < 0) continue;  // unlabeled rows carry no ground truth
    const std::size_t y = static_cast<std::size_t>(r.label);
    pred_counts[y][static_cast<std::size_t>(argmax_class(r.logits))] += 1.0;
    row_totals[y] += 1.0;
  }
  for (std::size_t y = 0; y < c; ++y)
    if (row_totals[y] == 0.0)
      throw std::invalid_argument("empirical_bias: class " + std::to_string(y) +
                                  " has no labeled records");
  std::vector<double> bias(c, 0.0);
  for (std::size_t l = 0; l < c; ++l) {
    double acc = 0.0;
    for (std::size_t y = 0; y < c; ++y) acc += pred_counts[y][l] / row_totals[y];
    bias[l] = acc / static_cast<double>(c) - 1.0 / static_cast<double>(c);
  }
  return bias;
}

/// Distribution-level analogue of empirical_bias: prediction probabilities
/// are estimated from the bank alone, treating the per-class logits as
/// independent draws from their cell mixtures. P(pred = l | y = c) is the
/// Monte Carlo mean over z ~ P_cl of the product over other classes of
/// F_cy'(z); rows are normalized before the bias formula since the product
/// estimates only sum to approximately one.
inline std::vector<double> distributional_bias(const GmmBank& bank, Domain domain,
                                               std::size_t mc_samples, std::uint64_t seed) {
  if (mc_samples == 0) throw std::invalid_argument("distributional_bias: mc_samples must be positive");
  const auto missing = bank.missing_cells(domain);
  if (!missing.empty()) {
    std::string msg = "distributional_bias: unestimated cells:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  const int c = bank.num_classes();
  const std::size_t cs = static_cast<std::size_t>(c);
  RandomEngine rng(derive_seed(seed, 0xb1a5));
  std::vector<std::vector<double>> prob(cs, std::vector<double>(cs, 0.0));
  std::vector<double> weights;
  for (int y = 0; y < c; ++y) {
    for (int l = 0; l < c; ++l) {
      const GaussianMixture& cell = bank.mixture(domain, y, l);
      weights.clear();
      for (const auto& comp : cell.components()) weights.push_back(comp.weight);
      double acc = 0.0;
      for (std::size_t s = 0; s < mc_samples; ++s) {
        const auto& comp = cell.components()[rng.pick(weights)];
        const double z = rng.normal(comp.mean, comp.std_dev);
        double product = 1.0;
        for (int other = 0; other < c; ++other) {
          if (other == l) continue;
          product *= bank.mixture(domain, y, other).cdf(z);
        }
        acc += product;
      }
      prob[static_cast<std::size_t>(y)][static_cast<std::size_t>(l)] =
          acc / static_cast<double>(mc_samples);
    }
  }
  for (std::size_t y = 0; y < cs; ++y) {
    double row = 0.0;
    for (double p : prob[y]) row += p;
    if (row > 0.0)
      for (double& p : prob[y]) p /= row;
  }
  std::vector<double> bias(cs, 0.0);
  for (std::size_t l = 0; l < cs; ++l) {
    double acc = 0.0;
    for (std::size_t y = 0; y < cs; ++y) acc += prob[y][l];
    bias[l] = acc / static_cast<double>(cs) - 1.0 / static_cast<double>(cs);
  }
  return bias;
}

}  // namespace logitbal
