#pragma once

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsical/calibration/ece.hpp"
#include "wsical/calibration/report.hpp"
#include "wsical/harness/results.hpp"
#include "wsical/harness/svg.hpp"

namespace wsical::harness {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw std::runtime_error("cannot write " + path.string());
}

inline void write_results_json(const fs::path& path, const ExperimentResult& r) {
  write_text(path, nlohmann::json(r).dump(2) + "\n");
}

inline ExperimentResult read_results_json(const fs::path& path) {
  const auto j = read_json_file(path);
  try {
    return j.get<ExperimentResult>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
}

/// Successful folds of one model, pooled into one prediction set. With
/// `scaled`, each fold's logits are first divided by that fold's T.
inline cal::PredictionSet pooled_predictions(const ExperimentResult& r, agg::ModelKind kind, const std::string& dataset,
                                             bool scaled) {
  cal::PredictionSet pooled;
  for (const auto& f : r.folds) {
    if (f.model != kind || f.failed) continue;
    cal::PredictionSet p = dataset == "id" ? f.id.predictions : f.ood.predictions;
    if (scaled) {
      for (auto& z : p.logits) z = {z[0] / f.temperature, z[1] / f.temperature};
    }
    pooled.append(p);
  }
  return pooled;
}

namespace detail {

inline std::string cell(const AggregateResult& a, const std::string& model, const std::string& dataset,
                        const std::string& metric) {
  auto m = a.find(model);
  if (m == a.end()) return "n/a";
  const auto& d = m->second.at(dataset);
  auto s = d.find(metric);
  return s == d.end() ? "n/a" : format_stat(s->second);
}

inline std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

/// One row per model x dataset x metric; models with no successful fold keep
/// their rows with empty values.
inline std::string summary_csv(const ExperimentResult& r) {
  std::string s = "model,dataset,metric,mean,std,n,formatted\n";
  const auto names = metric_names(r.config.calibration.modes);
  for (auto kind : r.config.models) {
    const std::string model = agg::to_string(kind);
    for (const char* dataset : kDatasets) {
      for (const auto& metric : names) {
        s += model + "," + dataset + "," + metric + ",";
        auto m = r.aggregate.find(model);
        if (m == r.aggregate.end()) {
          s += ",,0,\n";
          continue;
        }
        const Stat& st = m->second.at(dataset).at(metric);
        s += detail::csv_number(st.mean) + "," + detail::csv_number(st.std) + "," + std::to_string(st.n) + "," +
             format_stat(st) + "\n";
      }
    }
  }
  return s;
}

inline std::string ece_table_csv(const ExperimentResult& r, cal::BinningMode mode) {
  const std::string key = "ece_" + cal::to_string(mode);
  std::string s = "model,ID ECE,ID ECE (TS),OOD ECE,OOD ECE (TS)\n";
  for (auto kind : r.config.models) {
    const std::string model = agg::to_string(kind);
    s += model;
    for (const char* dataset : kDatasets) {
      s += "," + detail::cell(r.aggregate, model, dataset, key);
      s += "," + detail::cell(r.aggregate, model, dataset, key + "_ts");
    }
    s += "\n";
  }
  return s;
}

inline std::string auroc_table_csv(const ExperimentResult& r) {
  std::string s = "model,ID AUROC,OOD AUROC\n";
  for (auto kind : r.config.models) {
    const std::string model = agg::to_string(kind);
    s += model + "," + detail::cell(r.aggregate, model, "id", "auroc") + "," +
         detail::cell(r.aggregate, model, "ood", "auroc") + "\n";
  }
  return s;
}

inline std::string summary_markdown(const ExperimentResult& r) {
  std::string s = "# Results\n\n";
  s += "Mean ± sample std over successful folds; " + std::to_string(r.n_test) + " ID test slides, " +
       std::to_string(r.n_ood) + " OOD slides.\n\n";
  s += "## AUROC\n\n| Model | ID AUROC | OOD AUROC |\n|---|---|---|\n";
  for (auto kind : r.config.models) {
    const std::string model = agg::to_string(kind);
    s += "| " + model + " | " + detail::cell(r.aggregate, model, "id", "auroc") + " | " +
         detail::cell(r.aggregate, model, "ood", "auroc") + " |\n";
  }
  for (auto mode : r.config.calibration.modes) {
    const std::string key = "ece_" + cal::to_string(mode);
    s += "\n## ECE (" + cal::to_string(mode) + ", M = " + std::to_string(r.config.calibration.M) + ")\n\n";
    s += "| Model | ID ECE | ID ECE (TS) | OOD ECE | OOD ECE (TS) |\n|---|---|---|---|---|\n";
    for (auto kind : r.config.models) {
      const std::string model = agg::to_string(kind);
      s += "| " + model;
      for (const char* dataset : kDatasets) {
        s += " | " + detail::cell(r.aggregate, model, dataset, key);
        s += " | " + detail::cell(r.aggregate, model, dataset, key + "_ts");
      }
      s += " |\n";
    }
  }
  std::size_t failed = r.failed_folds();
  if (failed > 0) s += "\n" + std::to_string(failed) + " fold(s) failed and were excluded.\n";
  return s;
}

inline std::string metrics_svg(const ExperimentResult& r) {
  const auto mode = r.config.calibration.modes.front();
  const std::string key = "ece_" + cal::to_string(mode);
  std::vector<BarGroup> groups;
  for (auto kind : r.config.models) {
    const std::string model = agg::to_string(kind);
    auto m = r.aggregate.find(model);
    if (m == r.aggregate.end()) continue;
    BarGroup g;
    g.label = model;
    for (const char* dataset : kDatasets) {
      for (const std::string& name : {key, key + "_ts"}) {
        const Stat& st = m->second.at(dataset).at(name);
        g.means.push_back(st.mean);
        g.stds.push_back(st.std);
      }
    }
    groups.push_back(std::move(g));
  }
  return grouped_bar_svg(groups, {"ID ECE", "ID ECE (TS)", "OOD ECE", "OOD ECE (TS)"},
                         "ECE before and after temperature scaling (" + cal::to_string(mode) + ")", "ECE");
}

/// Writes every report artifact derived from `r` into `out`. Checkpoints are
/// written by the experiment itself since they need the trained weights.
inline void emit_report(const ExperimentResult& r, const fs::path& out) {
  if (r.failed_folds() == r.folds.size()) throw std::invalid_argument("emit_report: no successful fold");
  fs::create_directories(out / "reliability");
  fs::create_directories(out / "predictions");

  write_results_json(out / "results.json", r);
  write_text(out / "summary.csv", summary_csv(r));
  write_text(out / "summary.md", summary_markdown(r));
  write_text(out / "table_auroc.csv", auroc_table_csv(r));
  for (auto mode : r.config.calibration.modes) {
    write_text(out / ("table_ece_" + cal::to_string(mode) + ".csv"), ece_table_csv(r, mode));
  }
  write_text(out / "metrics.svg", metrics_svg(r));

  for (const auto& f : r.folds) {
    if (f.failed) continue;
    nlohmann::json j = {{"model", agg::to_string(f.model)}, {"fold", f.fold},         {"temperature", f.temperature},
                        {"validation", f.validation},       {"id_test", f.id.predictions}, {"ood", f.ood.predictions}};
    write_text(out / "predictions" / (agg::to_string(f.model) + "_fold" + std::to_string(f.fold) + ".json"),
               j.dump(2) + "\n");
  }

  const std::size_t M = r.config.calibration.M;
  for (auto kind : r.config.models) {
    const std::string model = agg::to_string(kind);
    for (const char* dataset : kDatasets) {
      for (bool scaled : {false, true}) {
        const cal::PredictionSet p = pooled_predictions(r, kind, dataset, scaled);
        if (p.empty()) continue;
        for (auto mode : r.config.calibration.modes) {
          const auto bins = cal::reliability_bins(p, M, mode);
          const std::string stem = model + "_" + dataset + "_" + cal::to_string(mode) + (scaled ? "_ts" : "");
          cal::write_reliability_csv(out / "reliability" / (stem + ".csv"), bins);
          char title[160];
          std::snprintf(title, sizeof title, "%s, %s%s, %s (ECE %.3f)", model.c_str(),
                        std::string(dataset) == "id" ? "ID" : "OOD", scaled ? " after TS" : "",
                        cal::to_string(mode).c_str(), cal::ece_from_bins(bins));
          render_reliability_svg(bins, out / "reliability" / (stem + ".svg"), title);
        }
      }
    }
  }
}

}  // namespace wsical::harness
