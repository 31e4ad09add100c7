#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "logitbal/io/json_codec.hpp"
#include "logitbal/losses.hpp"
#include "logitbal/mixture.hpp"
#include "logitbal/toy/spec.hpp"
#include "logitbal/toy/trainer.hpp"

namespace logitbal {

/// Full tool configuration. Defaults: 5 mixture components, 3 EM loops,
/// momentum 0.99, tau 0.1, lambda 0.2, confidence threshold 0.9, teacher EMA
/// 0.999, n_min 100.
struct Config {
  EmConfig em;
  LossConfig loss;
  double ema = 0.999;
  std::size_t n_min = 100;
  std::size_t cell_cap = 10000;
  std::size_t mc_samples = 50000;
  std::uint64_t seed = 0;
  // toy run schedule
  int iterations = 2000;
  int batch_size = 256;
  double learning_rate = 0.1;
  int warmup_iters = 0;
  int eval_every = 100;
  toy::ModelConfig model;
  toy::DomainSpec domain = toy::DomainSpec::default_spec();

  toy::RunSettings run_settings() const {
    toy::RunSettings s;
    s.em = em;
    s.loss = loss;
    s.ema = ema;
    s.n_min = n_min;
    s.cell_cap = cell_cap;
    s.mc_samples = mc_samples;
    s.iterations = iterations;
    s.batch_size = batch_size;
    s.learning_rate = learning_rate;
    s.warmup_iters = warmup_iters;
    s.eval_every = eval_every;
    s.model = model;
    s.seed = seed;
    return s;
  }

  void validate() const {
    toy::DomainSpec d = domain;
    d.seed = seed;
    run_settings().validate();
    d.validate();
  }
};

namespace io {

inline json loss_config_to_json(const LossConfig& c) {
  return json{{"tau", c.tau},
              {"lambda", c.lambda},
              {"p_threshold", c.p_threshold},
              {"quality_rule", c.quality_rule == QualityRule::kThreshold ? "threshold" : "linear"}};
}

inline LossConfig loss_config_from_json(const json& j) {
  LossConfig c;
  c.tau = j.value("tau", c.tau);
  c.lambda = j.value("lambda", c.lambda);
  c.p_threshold = j.value("p_threshold", c.p_threshold);
  const std::string rule = j.value("quality_rule", std::string("threshold"));
  if (rule == "threshold")
    c.quality_rule = QualityRule::kThreshold;
  else if (rule == "linear")
    c.quality_rule = QualityRule::kLinear;
  else
    throw std::runtime_error("config: unknown quality_rule '" + rule + "'");
  c.validate();
  return c;
}

inline json model_config_to_json(const toy::ModelConfig& m) {
  return json{{"scorer", m.kind == toy::ScorerKind::kLinear ? "linear" : "hidden"},
              {"hidden_width", m.hidden_width},
              {"init_scale", m.init_scale}};
}

inline toy::ModelConfig model_config_from_json(const json& j) {
  toy::ModelConfig m;
  const std::string kind = j.value("scorer", std::string("linear"));
  if (kind == "linear")
    m.kind = toy::ScorerKind::kLinear;
  else if (kind == "hidden")
    m.kind = toy::ScorerKind::kHidden;
  else
    throw std::runtime_error("config: unknown scorer '" + kind + "'");
  m.hidden_width = j.value("hidden_width", m.hidden_width);
  m.init_scale = j.value("init_scale", m.init_scale);
  return m;
}

inline json domain_spec_to_json(const toy::DomainSpec& d) {
  json gens = json::array();
  for (const auto& g : d.generators) gens.push_back({{"mean", g.mean}, {"std", g.std_dev}});
  return json{{"num_classes", d.num_classes},
              {"feature_dim", d.feature_dim},
              {"source_priors", d.source_priors},
              {"target_priors", d.target_priors},
              {"generators", std::move(gens)},
              {"target_shift", d.target_shift},
              {"target_std_scale", d.target_std_scale},
              {"n_source", d.n_source},
              {"n_target", d.n_target},
              {"n_eval", d.n_eval}};
}

inline toy::DomainSpec domain_spec_from_json(const json& j) {
  toy::DomainSpec d = toy::DomainSpec::default_spec();
  d.num_classes = j.value("num_classes", d.num_classes);
  d.feature_dim = j.value("feature_dim", d.feature_dim);
  if (j.contains("source_priors")) d.source_priors = j.at("source_priors").get<std::vector<double>>();
  if (j.contains("target_priors")) d.target_priors = j.at("target_priors").get<std::vector<double>>();
  if (j.contains("generators")) {
    d.generators.clear();
    for (const auto& g : j.at("generators"))
      d.generators.push_back({g.at("mean").get<std::vector<double>>(), g.at("std").get<double>()});
  }
  if (j.contains("target_shift"))
    d.target_shift = j.at("target_shift").get<std::vector<std::vector<double>>>();
  d.target_std_scale = j.value("target_std_scale", d.target_std_scale);
  d.n_source = j.value("n_source", d.n_source);
  d.n_target = j.value("n_target", d.n_target);
  d.n_eval = j.value("n_eval", d.n_eval);
  return d;
}

inline json config_to_json(const Config& c) {
  return json{{"em", em_config_to_json(c.em)},
              {"loss", loss_config_to_json(c.loss)},
              {"ema", c.ema},
              {"n_min", c.n_min},
              {"cell_cap", c.cell_cap},
              {"mc_samples", c.mc_samples},
              {"seed", c.seed},
              {"iterations", c.iterations},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"warmup_iters", c.warmup_iters},
              {"eval_every", c.eval_every},
              {"model", model_config_to_json(c.model)},
              {"domain", domain_spec_to_json(c.domain)}};
}

inline Config config_from_json(const json& j) {
  Config c;
  if (j.contains("em")) c.em = em_config_from_json(j.at("em"));
  if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
  c.ema = j.value("ema", c.ema);
  c.n_min = j.value("n_min", c.n_min);
  c.cell_cap = j.value("cell_cap", c.cell_cap);
  c.mc_samples = j.value("mc_samples", c.mc_samples);
  c.seed = j.value("seed", c.seed);
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.warmup_iters = j.value("warmup_iters", c.warmup_iters);
  c.eval_every = j.value("eval_every", c.eval_every);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("domain")) c.domain = domain_spec_from_json(j.at("domain"));
  c.validate();
  return c;
}

/// FNV-1a over the canonical JSON dump; stamped into every emitted report.
inline std::string config_hash(const Config& c) {
  const std::string text = config_to_json(c).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Applies environment overrides: every leaf key of the config JSON can be
/// overridden by LOGITBAL_<PATH> with path segments joined by underscores
/// and uppercased (e.g. LOGITBAL_LOSS_TAU=0.5, LOGITBAL_EM_COMPONENTS=3,
/// LOGITBAL_DOMAIN_SOURCE_PRIORS='[0.8,0.1,0.1]'). Values parse as JSON when
/// possible, otherwise as strings.
inline Config apply_env_overrides(const Config& c, const std::string& prefix = "LOGITBAL_") {
  json j = config_to_json(c);
  struct Walker {
    const std::string& prefix;
    void visit(json& node, const std::string& path) {
      if (node.is_object()) {
        for (auto& [key, value] : node.items()) {
          std::string sub = path.empty() ? key : path + "_" + key;
          visit(value, sub);
        }
        return;
      }
      std::string name = prefix + path;
      for (auto& ch : name) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      const char* env = std::getenv(name.c_str());
      if (!env) return;
      const json parsed = json::parse(env, nullptr, /*allow_exceptions=*/false);
      node = parsed.is_discarded() ? json(std::string(env)) : parsed;
    }
  } walker{prefix};
  walker.visit(j, "");
  return config_from_json(j);
}

}  // namespace io
}  // namespace logitbal
