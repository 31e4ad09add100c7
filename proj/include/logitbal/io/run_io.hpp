#pragma once

#include <filesystem>
#include <sstream>
#include <string>

#include "logitbal/config.hpp"
#include "logitbal/io/files.hpp"
#include "logitbal/toy/trainer.hpp"
#include "logitbal/version.hpp"

namespace logitbal::io {

inline json provenance_block(const Config& cfg) {
  return json{{"config_hash", config_hash(cfg)}, {"seed", cfg.seed}, {"tool_version", kToolVersion}};
}

namespace detail {
inline json optional_series(const std::vector<std::optional<double>>& xs) {
  json arr = json::array();
  for (const auto& x : xs) {
    if (x)
      arr.push_back(*x);
    else
      arr.push_back(nullptr);
  }
  return arr;
}

inline json history_to_json(const std::vector<toy::HistoryRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows)
    arr.push_back({{"iteration", r.iteration},
                   {"source_loss", r.source_loss},
                   {"target_loss", r.target_loss},
                   {"reg_loss", r.reg_loss},
                   {"macc", r.macc},
                   {"miou", r.miou},
                   {"max_abs_bias", r.max_abs_bias},
                   {"mean_ks_pos", r.mean_ks_pos}});
  return arr;
}
}  // namespace detail

inline json variant_to_json(const toy::VariantResult& v) {
  json j;
  j["name"] = v.name;
  j["summary"] = {{"macc", v.metrics.macc},
                  {"miou", v.metrics.miou},
                  {"std_acc", v.metrics.std_acc},
                  {"std_iou", v.metrics.std_iou}};
  j["per_class"] = {{"acc", detail::optional_series(v.per_class.acc)},
                    {"iou", detail::optional_series(v.per_class.iou)}};
  j["empirical_bias"] = v.empirical_bias;
  if (v.distributional_bias.empty())
    j["distributional_bias"] = nullptr;
  else
    j["distributional_bias"] = v.distributional_bias;
  j["max_abs_bias"] = v.max_abs_bias;
  j["history"] = detail::history_to_json(v.history);
  return j;
}

inline json report_to_json(const toy::RunReport& report, const Config& cfg) {
  return json{{"provenance", provenance_block(cfg)},
              {"config", config_to_json(cfg)},
              {"variants", {{"baseline", variant_to_json(report.baseline)},
                            {"adjusted", variant_to_json(report.adjusted)}}}};
}

inline std::string history_tsv(const toy::RunReport& report) {
  std::ostringstream out;
  out << "variant\titeration\tsource_loss\ttarget_loss\treg_loss\tmacc\tmiou\tmax_abs_bias\tmean_ks_pos\n";
  for (const auto* v : {&report.baseline, &report.adjusted})
    for (const auto& r : v->history) {
      out << v->name << '\t' << r.iteration << '\t' << format_double(r.source_loss) << '\t'
          << format_double(r.target_loss) << '\t' << format_double(r.reg_loss) << '\t'
          << format_double(r.macc) << '\t' << format_double(r.miou) << '\t'
          << format_double(r.max_abs_bias) << '\t' << format_double(r.mean_ks_pos) << "\n";
    }
  return out.str();
}

inline std::string predictions_csv(const toy::RunReport& report) {
  std::ostringstream out;
  out << "index,label,baseline,adjusted\n";
  for (std::size_t i = 0; i < report.adjusted.eval_labels.size(); ++i)
    out << i << ',' << report.adjusted.eval_labels[i] << ',' << report.baseline.eval_predictions[i]
        << ',' << report.adjusted.eval_predictions[i] << "\n";
  return out.str();
}

/// Run directory layout: config.json, history.tsv, bank_final.json,
/// report.json, preds_final.csv.
inline void write_run_dir(const std::filesystem::path& dir, const toy::RunReport& report,
                          const Config& cfg) {
  std::filesystem::create_directories(dir);
  json cfg_echo = config_to_json(cfg);
  cfg_echo["provenance"] = provenance_block(cfg);
  atomic_write_file(dir / "config.json", cfg_echo.dump(2) + "\n");
  atomic_write_file(dir / "history.tsv", history_tsv(report));
  json bank = report.adjusted.bank_json;
  bank["provenance"] = provenance_block(cfg);
  atomic_write_file(dir / "bank_final.json", bank.dump(2) + "\n");
  atomic_write_file(dir / "report.json", report_to_json(report, cfg).dump(2) + "\n");
  atomic_write_file(dir / "preds_final.csv", predictions_csv(report));
}

}  // namespace logitbal::io
