#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "logitbal/bank.hpp"
#include "logitbal/logit_matrix.hpp"
#include "logitbal/mixture.hpp"

namespace logitbal::io {

using nlohmann::json;

// Mixtures serialize as parallel parameter arrays; CDF grids are rebuilt on
// load, never stored.

inline json mixture_to_json(const GaussianMixture& m) {
  json j;
  auto& w = j["weights"] = json::array();
  auto& mu = j["means"] = json::array();
  auto& sd = j["stds"] = json::array();
  for (const auto& c : m.components()) {
    w.push_back(c.weight);
    mu.push_back(c.mean);
    sd.push_back(c.std_dev);
  }
  return j;
}

inline GaussianMixture mixture_from_json(const json& j, const EmConfig& cfg) {
  const auto& w = j.at("weights");
  const auto& mu = j.at("means");
  const auto& sd = j.at("stds");
  if (w.size() != mu.size() || w.size() != sd.size())
    throw std::runtime_error("mixture_from_json: ragged parameter arrays");
  std::vector<GaussianComponent> comps(w.size());
  for (std::size_t k = 0; k < comps.size(); ++k)
    comps[k] = {w[k].get<double>(), mu[k].get<double>(), sd[k].get<double>()};
  return GaussianMixture(std::move(comps), cfg.sigma_floor, cfg.grid_points, cfg.grid_span);
}

inline json em_config_to_json(const EmConfig& cfg) {
  return json{{"components", cfg.components}, {"em_loops", cfg.em_loops},
              {"momentum", cfg.momentum},     {"sigma_floor", cfg.sigma_floor},
              {"grid_points", cfg.grid_points}, {"grid_span", cfg.grid_span}};
}

inline EmConfig em_config_from_json(const json& j) {
  EmConfig cfg;
  cfg.components = j.value("components", cfg.components);
  cfg.em_loops = j.value("em_loops", cfg.em_loops);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.sigma_floor = j.value("sigma_floor", cfg.sigma_floor);
  cfg.grid_points = j.value("grid_points", cfg.grid_points);
  cfg.grid_span = j.value("grid_span", cfg.grid_span);
  cfg.validate();
  return cfg;
}

inline json bank_to_json(const GmmBank& bank) {
  json j;
  j["num_classes"] = bank.num_classes();
  j["n_min"] = bank.n_min();
  j["em"] = em_config_to_json(bank.em_config());
  j["anchors_estimated"] = bank.anchors_estimated();
  j["anchor_pos"] = mixture_to_json(bank.anchor_pos());
  j["anchor_neg"] = mixture_to_json(bank.anchor_neg());
  for (Domain d : {Domain::kSource, Domain::kTarget}) {
    json cells = json::array(), stale = json::array(), est = json::array();
    for (int i = 0; i < bank.num_classes(); ++i)
      for (int k = 0; k < bank.num_classes(); ++k) {
        cells.push_back(mixture_to_json(bank.mixture(d, i, k)));
        stale.push_back(bank.staleness(d, i, k));
        est.push_back(bank.estimated(d, i, k));
      }
    j[domain_name(d)] = {{"cells", std::move(cells)},
                         {"staleness", std::move(stale)},
                         {"estimated", std::move(est)}};
  }
  return j;
}

inline GmmBank bank_from_json(const json& j) {
  const int c = j.at("num_classes").get<int>();
  const EmConfig cfg = em_config_from_json(j.at("em"));
  GmmBank bank(c, cfg, j.at("n_min").get<std::size_t>());
  for (Domain d : {Domain::kSource, Domain::kTarget}) {
    const auto& block = j.at(domain_name(d));
    const auto& cells = block.at("cells");
    const auto& stale = block.at("staleness");
    const auto& est = block.at("estimated");
    if (static_cast<int>(cells.size()) != c * c)
      throw std::runtime_error("bank_from_json: wrong cell count for " + std::string(domain_name(d)));
    for (int i = 0; i < c; ++i)
      for (int k = 0; k < c; ++k) {
        const std::size_t idx = static_cast<std::size_t>(i * c + k);
        bank.set_mixture(d, i, k, mixture_from_json(cells[idx], cfg), est[idx].get<bool>(),
                         stale[idx].get<std::uint64_t>());
      }
  }
  bank.set_anchors(mixture_from_json(j.at("anchor_pos"), cfg), mixture_from_json(j.at("anchor_neg"), cfg),
                   j.at("anchors_estimated").get<bool>());
  return bank;
}

inline json matrix_to_json(const LogitSetMatrix& m) {
  json j;
  j["num_classes"] = m.num_classes();
  j["cell_cap"] = m.cell_cap();
  j["rng"] = m.rng_state();
  json cells = json::array(), seen = json::array();
  for (int i = 0; i < m.num_classes(); ++i)
    for (int k = 0; k < m.num_classes(); ++k) {
      cells.push_back(m.cell(i, k));
      seen.push_back(m.seen(i, k));
    }
  j["cells"] = std::move(cells);
  j["seen"] = std::move(seen);
  return j;
}

inline LogitSetMatrix matrix_from_json(const json& j) {
  const int c = j.at("num_classes").get<int>();
  LogitSetMatrix m(c, j.at("cell_cap").get<std::size_t>());
  const auto& cells = j.at("cells");
  const auto& seen = j.at("seen");
  for (int i = 0; i < c; ++i)
    for (int k = 0; k < c; ++k) {
      const std::size_t idx = static_cast<std::size_t>(i * c + k);
      m.set_cell(i, k, cells[idx].get<std::vector<double>>(), seen[idx].get<std::uint64_t>());
    }
  m.restore_rng_state(j.at("rng").get<std::string>());
  return m;
}

}  // namespace logitbal::io
