#pragma once

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "logitbal/config.hpp"
#include "logitbal/io/csv.hpp"
#include "logitbal/io/run_io.hpp"
#include "logitbal/offsets.hpp"
#include "logitbal/toy/trainer.hpp"
#include "logitbal/version.hpp"

namespace logitbal {

namespace cli_detail {

struct GlobalFlags {
  bool quiet = false;
  bool json_errors = false;
  std::optional<std::uint64_t> seed;
};

inline int fail(const GlobalFlags& g, const char* code, const std::string& message) {
  if (g.json_errors)
    std::cerr << io::json{{"error", code}, {"message", message}}.dump() << "\n";
  else
    std::cerr << code << ": " << message << "\n";
  return 1;
}

inline void info(const GlobalFlags& g, const std::string& message) {
  if (!g.quiet) std::cerr << message << "\n";
}

inline Config load_config(const std::optional<std::string>& path, const GlobalFlags& g) {
  Config cfg;
  if (path) cfg = io::config_from_json(io::json::parse(io::read_file(*path)));
  cfg = io::apply_env_overrides(cfg);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

inline GmmBank load_bank(const std::string& path) {
  return io::bank_from_json(io::json::parse(io::read_file(path)));
}

/// All mixture parameters of the bank as one flat vector, for drift checks.
inline std::vector<double> flatten_bank(const GmmBank& bank) {
  std::vector<double> out;
  const auto push = [&out](const GaussianMixture& m) {
    for (const auto& c : m.components()) {
      out.push_back(c.weight);
      out.push_back(c.mean);
      out.push_back(c.std_dev);
    }
  };
  for (Domain d : {Domain::kSource, Domain::kTarget})
    for (int i = 0; i < bank.num_classes(); ++i)
      for (int j = 0; j < bank.num_classes(); ++j) push(bank.mixture(d, i, j));
  push(bank.anchor_pos());
  push(bank.anchor_neg());
  return out;
}

inline int cmd_estimate(const GlobalFlags& g, const std::string& logits_path,
                        const std::optional<std::string>& config_path, const std::string& out_path,
                        int max_epochs) {
  const Config cfg = load_config(config_path, g);
  const LogitBatch dump = io::read_logit_dump(logits_path);
  dump.validate();
  const int c = dump.num_classes;

  LogitSetMatrix source_matrix(c, cfg.cell_cap, derive_seed(cfg.seed, 0xe501));
  LogitSetMatrix target_matrix(c, cfg.cell_cap, derive_seed(cfg.seed, 0xe502));
  accumulate(source_matrix, dump, Domain::kSource);
  accumulate(target_matrix, dump, Domain::kTarget);
  bool has_source = false, has_target = false;
  for (const auto& r : dump.records) (r.domain == Domain::kSource ? has_source : has_target) = true;

  GmmBank bank(c, cfg.em, cfg.n_min);
  std::vector<double> prev = flatten_bank(bank);
  int epoch = 0;
  double drift = std::numeric_limits<double>::infinity();
  // the per-epoch sample seed is fixed, so the momentum iteration contracts
  // to a fixed point and the drift threshold is reachable
  const CellSamples src_samples =
      has_source ? sample_cells(source_matrix, cfg.n_min, std::nullopt, derive_seed(cfg.seed, 0xe511))
                 : CellSamples{};
  const CellSamples tgt_samples =
      has_target ? sample_cells(target_matrix, cfg.n_min, std::nullopt, derive_seed(cfg.seed, 0xe512))
                 : CellSamples{};
  for (epoch = 1; epoch <= max_epochs; ++epoch) {
    if (has_source) update_bank(bank, Domain::kSource, src_samples, cfg.em);
    if (has_target) update_bank(bank, Domain::kTarget, tgt_samples, cfg.em);
    std::vector<double> cur = flatten_bank(bank);
    drift = 0.0;
    for (std::size_t i = 0; i < cur.size(); ++i) drift = std::max(drift, std::abs(cur[i] - prev[i]));
    prev = std::move(cur);
    if (drift < 1e-4) break;
  }
  info(g, "estimate: stopped after " + std::to_string(std::min(epoch, max_epochs)) +
              " epochs (drift " + io::format_double(drift) + ")");

  io::json out = io::bank_to_json(bank);
  out["provenance"] = io::provenance_block(cfg);
  io::atomic_write_file(out_path, out.dump(2) + "\n");
  return 0;
}

inline io::json audit_domain(const Config& cfg, const GmmBank& bank, const LogitBatch& dump,
                             Domain domain) {
  const int c = bank.num_classes();
  LogitBatch subset;
  subset.num_classes = c;
  for (const auto& r : dump.records)
    if (r.domain == domain) subset.records.push_back(r);
  io::json j;
  if (subset.records.empty()) {
    j["note"] = "no records for this domain";
    return j;
  }

  try {
    j["empirical_bias"] = empirical_bias(subset, c);
  } catch (const std::invalid_argument& e) {
    j["empirical_bias"] = nullptr;
    j["empirical_bias_note"] = e.what();
  }
  if (bank.all_estimated(domain)) {
    j["distributional_bias"] =
        distributional_bias(bank, domain, cfg.mc_samples, derive_seed(cfg.seed, 0xa0d1));
  } else {
    j["distributional_bias"] = nullptr;
    j["distributional_bias_note"] =
        std::to_string(bank.missing_cells(domain).size()) + " cells not estimated";
  }

  // sign classification from whichever bias estimate is present
  const io::json& bias = j["empirical_bias"].is_null() ? j["distributional_bias"] : j["empirical_bias"];
  if (!bias.is_null()) {
    io::json over = io::json::array(), under = io::json::array();
    for (int l = 0; l < c; ++l) {
      if (bias[static_cast<std::size_t>(l)].get<double>() > 0.0)
        over.push_back(l);
      else
        under.push_back(l);
    }
    j["over_predicted"] = std::move(over);
    j["under_predicted"] = std::move(under);
  }

  EvalTally tally(c);
  std::size_t labeled = 0;
  for (const auto& r : subset.records)
    if (r.label >= 0) {
      tally.record(r.label, argmax_class(r.logits));
      ++labeled;
    }
  if (labeled > 0) {
    const MetricSummary ms = summary(tally);
    const PerClassMetrics pc = per_class_metrics(tally);
    j["summary"] = {{"macc", ms.macc}, {"miou", ms.miou}, {"std_acc", ms.std_acc}, {"std_iou", ms.std_iou}};
    j["per_class"] = {{"acc", io::detail::optional_series(pc.acc)},
                      {"iou", io::detail::optional_series(pc.iou)}};
  } else {
    j["summary"] = nullptr;
  }

  io::json means = io::json::array(), stds = io::json::array(), estimated = io::json::array();
  for (int i = 0; i < c; ++i)
    for (int k = 0; k < c; ++k) {
      const auto& m = bank.mixture(domain, i, k);
      double mean = 0.0, second = 0.0;
      for (const auto& comp : m.components()) {
        mean += comp.weight * comp.mean;
        second += comp.weight * (comp.std_dev * comp.std_dev + comp.mean * comp.mean);
      }
      means.push_back(mean);
      stds.push_back(std::sqrt(std::max(second - mean * mean, 0.0)));
      estimated.push_back(bank.estimated(domain, i, k));
    }
  j["bank_cells"] = {{"means", std::move(means)}, {"stds", std::move(stds)}, {"estimated", std::move(estimated)}};
  return j;
}

inline int cmd_audit(const GlobalFlags& g, const std::string& logits_path, const std::string& bank_path,
                     const std::optional<std::string>& config_path, const std::string& out_path) {
  const Config cfg = load_config(config_path, g);
  const GmmBank bank = load_bank(bank_path);
  const LogitBatch dump = io::read_logit_dump(logits_path);
  dump.validate();
  if (dump.num_classes != bank.num_classes())
    throw std::invalid_argument("audit: dump has " + std::to_string(dump.num_classes) +
                                " classes but the bank has " + std::to_string(bank.num_classes()));
  io::json report;
  report["provenance"] = io::provenance_block(cfg);
  report["num_classes"] = bank.num_classes();
  report["domains"] = {{"source", audit_domain(cfg, bank, dump, Domain::kSource)},
                       {"target", audit_domain(cfg, bank, dump, Domain::kTarget)}};
  io::atomic_write_file(out_path, report.dump(2) + "\n");
  info(g, "audit: wrote " + out_path);
  return 0;
}

inline int cmd_adjust(const GlobalFlags& g, const std::string& logits_path, const std::string& bank_path,
                      double tau, const std::string& out_path) {
  if (tau < 0.0) throw std::invalid_argument("adjust: tau must be non-negative");
  const GmmBank bank = load_bank(bank_path);
  const LogitBatch dump = io::read_logit_dump(logits_path);
  dump.validate();
  if (dump.num_classes != bank.num_classes())
    throw std::invalid_argument("adjust: dump has " + std::to_string(dump.num_classes) +
                                " classes but the bank has " + std::to_string(bank.num_classes()));
  const OffsetEvaluator source_offsets = build_offsets(bank, Domain::kSource);
  const OffsetEvaluator target_offsets = build_offsets(bank, Domain::kTarget);
  std::vector<io::PredictionRow> rows;
  rows.reserve(dump.records.size());
  for (const auto& r : dump.records) {
    const auto& offsets = r.domain == Domain::kSource ? source_offsets : target_offsets;
    rows.push_back({r.domain, r.label, argmax_class(r.logits), post_hoc_predict(r.logits, offsets, tau)});
  }
  io::atomic_write_file(out_path, io::write_predictions_text(rows));
  info(g, "adjust: wrote " + std::to_string(rows.size()) + " predictions to " + out_path);
  return 0;
}

inline int cmd_train_toy(const GlobalFlags& g, const std::string& config_path, const std::string& out_dir,
                         std::optional<int> halt_at, const std::optional<std::string>& resume_path) {
  const Config cfg = load_config(config_path, g);
  toy::DomainSpec dspec = cfg.domain;
  dspec.seed = cfg.seed;
  const toy::RunSettings settings = cfg.run_settings();

  toy::Trainer baseline(dspec, settings.baseline());
  toy::Trainer adjusted(dspec, settings);
  if (resume_path) {
    const io::json snap = io::json::parse(io::read_file(*resume_path));
    baseline.restore(snap.at("baseline"));
    adjusted.restore(snap.at("adjusted"));
    info(g, "train-toy: resumed from iteration " + std::to_string(adjusted.iteration()));
  }
  if (halt_at) {
    baseline.run_until(*halt_at);
    adjusted.run_until(*halt_at);
    io::json snap;
    snap["provenance"] = io::provenance_block(cfg);
    snap["baseline"] = baseline.snapshot();
    snap["adjusted"] = adjusted.snapshot();
    std::filesystem::create_directories(out_dir);
    io::atomic_write_file(std::filesystem::path(out_dir) / "snapshot.json", snap.dump() + "\n");
    info(g, "train-toy: halted at iteration " + std::to_string(adjusted.iteration()) + ", snapshot written");
    return 0;
  }
  baseline.run();
  adjusted.run();
  toy::RunReport report;
  report.spec = dspec;
  report.settings = settings;
  report.baseline = toy::detail::finish_variant(baseline, "baseline");
  report.adjusted = toy::detail::finish_variant(adjusted, "adjusted");
  io::write_run_dir(out_dir, report, cfg);
  info(g, "train-toy: wrote run directory " + out_dir);
  return 0;
}

inline int cmd_report(const std::string& run_dir) {
  const io::json report = io::json::parse(io::read_file(std::filesystem::path(run_dir) / "report.json"));
  std::ostringstream out;
  out << "variant\tmacc\tmiou\tstd_acc\tstd_iou\tmax_abs_bias\n";
  for (const char* name : {"baseline", "adjusted"}) {
    const auto& v = report.at("variants").at(name);
    const auto& s = v.at("summary");
    out << name << '\t' << io::format_double(s.at("macc").get<double>()) << '\t'
        << io::format_double(s.at("miou").get<double>()) << '\t'
        << io::format_double(s.at("std_acc").get<double>()) << '\t'
        << io::format_double(s.at("std_iou").get<double>()) << '\t'
        << io::format_double(v.at("max_abs_bias").get<double>()) << "\n";
  }
  out << "\nclass\tacc_baseline\tacc_adjusted\tiou_baseline\tiou_adjusted\tbias_baseline\tbias_adjusted\n";
  const auto& base = report.at("variants").at("baseline");
  const auto& adj = report.at("variants").at("adjusted");
  const std::size_t c = base.at("per_class").at("acc").size();
  const auto cell = [](const io::json& v) {
    return v.is_null() ? std::string("-") : io::format_double(v.get<double>());
  };
  for (std::size_t i = 0; i < c; ++i) {
    out << i << '\t' << cell(base.at("per_class").at("acc")[i]) << '\t'
        << cell(adj.at("per_class").at("acc")[i]) << '\t' << cell(base.at("per_class").at("iou")[i])
        << '\t' << cell(adj.at("per_class").at("iou")[i]) << '\t'
        << cell(base.at("empirical_bias")[i]) << '\t' << cell(adj.at("empirical_bias")[i]) << "\n";
  }
  std::cout << out.str();
  return 0;
}

}  // namespace cli_detail

/// Entry point shared by the binary and the tests. Returns the process exit
/// status; failures print one machine-parsable error line.
inline int cli_dispatch(const std::vector<std::string>& args) {
  using namespace cli_detail;
  GlobalFlags flags;
  CLI::App app{"per-class logit distribution estimation, bias audit and alignment"};
  app.require_subcommand(1);
  app.add_flag("--quiet", flags.quiet, "suppress informational messages");
  app.add_flag("--json-errors", flags.json_errors, "emit errors as single-line JSON");
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "override the config seed");

  std::string logits_path, bank_path, out_path, run_dir, train_config_path;
  std::optional<std::string> config_path, resume_path;
  double tau = 0.1;
  int max_epochs = 1000;
  std::optional<int> halt_at;

  auto* estimate = app.add_subcommand("estimate", "fit a mixture bank from a logit dump");
  estimate->add_option("--logits", logits_path, "logit dump CSV")->required();
  estimate->add_option("--config", config_path, "config JSON");
  estimate->add_option("--out", out_path, "output bank JSON")->required();
  estimate->add_option("--max-epochs", max_epochs, "epoch cap for the drift loop");

  auto* audit = app.add_subcommand("audit", "assess per-class prediction bias");
  audit->add_option("--logits", logits_path, "logit dump CSV")->required();
  audit->add_option("--bank", bank_path, "bank JSON from estimate")->required();
  audit->add_option("--config", config_path, "config JSON");
  audit->add_option("--out", out_path, "output bias report JSON")->required();

  auto* adjust = app.add_subcommand("adjust", "emit post-hoc balanced predictions");
  adjust->add_option("--logits", logits_path, "logit dump CSV")->required();
  adjust->add_option("--bank", bank_path, "bank JSON from estimate")->required();
  adjust->add_option("--tau", tau, "offset scaling factor");
  adjust->add_option("--out", out_path, "output predictions CSV")->required();

  auto* train = app.add_subcommand("train-toy", "run the synthetic self-training experiment");
  train->add_option("--config", train_config_path, "config JSON")->required();
  train->add_option("--out", out_path, "output run directory")->required();
  train->add_option("--halt-at", halt_at, "stop after this iteration and write a snapshot");
  train->add_option("--resume", resume_path, "resume from a snapshot file");

  auto* report = app.add_subcommand("report", "print run summary tables as TSV");
  report->add_option("--run", run_dir, "run directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  if (*seed_opt) flags.seed = seed_value;

  try {
    if (estimate->parsed()) return cmd_estimate(flags, logits_path, config_path, out_path, max_epochs);
    if (audit->parsed()) return cmd_audit(flags, logits_path, bank_path, config_path, out_path);
    if (adjust->parsed()) return cmd_adjust(flags, logits_path, bank_path, tau, out_path);
    if (train->parsed()) return cmd_train_toy(flags, train_config_path, out_path, halt_at, resume_path);
    if (report->parsed()) return cmd_report(run_dir);
  } catch (const io::ParseError& e) {
    return fail(flags, "E_PARSE", e.what());
  } catch (const io::IoError& e) {
    return fail(flags, "E_IO", e.what());
  } catch (const io::json::exception& e) {
    return fail(flags, "E_PARSE", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(flags, "E_CONTRACT", e.what());
  } catch (const std::domain_error& e) {
    return fail(flags, "E_CONTRACT", e.what());
  } catch (const std::runtime_error& e) {
    return fail(flags, "E_STATE", e.what());
  }
  return fail(flags, "E_USAGE", "no subcommand selected");
}

inline int cli_dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args);
}

}  // namespace logitbal
