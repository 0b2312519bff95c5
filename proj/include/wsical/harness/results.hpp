#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "wsical/aggregators/config.hpp"
#include "wsical/aggregators/train.hpp"
#include "wsical/calibration/ece.hpp"
#include "wsical/calibration/predictions.hpp"
#include "wsical/harness/config.hpp"

namespace wsical::cal {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PredictionSet, slide_ids, labels, logits)

}  // namespace wsical::cal

namespace wsical::harness {

// JSON has no NaN; failed folds carry NaN scores, written as null.
inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
inline double num(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

struct MetricBlock {
  double auroc = 0;
  double balanced_accuracy = 0;
  double nll = 0;
  std::map<std::string, double> ece;  // keyed by binning mode name

  bool operator==(const MetricBlock&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(MetricBlock, auroc, balanced_accuracy, nll, ece)

/// One evaluation set, before and after dividing the logits by the fold's T.
struct EvalResult {
  MetricBlock pre;
  MetricBlock post;
  cal::PredictionSet predictions;

  bool operator==(const EvalResult&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalResult, pre, post, predictions)

struct FoldResult {
  agg::ModelKind model = agg::ModelKind::kClam;
  std::size_t fold = 0;
  bool failed = false;
  std::string failure;
  std::size_t best_epoch = 0;
  double best_score = 0;
  std::string score_name;
  double temperature = 1.0;
  std::vector<agg::EpochRecord> history;
  cal::PredictionSet validation;
  EvalResult id;
  EvalResult ood;

  bool operator==(const FoldResult&) const = default;
};

inline void to_json(nlohmann::json& j, const FoldResult& f) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : f.history) {
    history.push_back({{"epoch", h.epoch},
                       {"train_loss", num(h.train_loss)},
                       {"val_score", num(h.val_score)},
                       {"steps", h.steps},
                       {"skipped_steps", h.skipped_steps}});
  }
  j = {{"model", agg::to_string(f.model)},
       {"fold", f.fold},
       {"failed", f.failed},
       {"best_epoch", f.best_epoch},
       {"best_score", num(f.best_score)},
       {"score_name", f.score_name},
       {"temperature", f.temperature},
       {"history", history}};
  if (f.failed) {
    j["failure"] = f.failure;
    return;
  }
  j["validation"] = f.validation;
  j["id"] = f.id;
  j["ood"] = f.ood;
}

inline void from_json(const nlohmann::json& j, FoldResult& f) {
  f = FoldResult{};
  f.model = agg::parse_model_kind(j.at("model").get<std::string>());
  f.fold = j.at("fold").get<std::size_t>();
  f.failed = j.at("failed").get<bool>();
  f.best_epoch = j.at("best_epoch").get<std::size_t>();
  f.best_score = num(j.at("best_score"));
  f.score_name = j.at("score_name").get<std::string>();
  f.temperature = j.at("temperature").get<double>();
  for (const auto& h : j.at("history")) {
    f.history.push_back({h.at("epoch").get<std::size_t>(), num(h.at("train_loss")), num(h.at("val_score")),
                         h.at("steps").get<std::size_t>(), h.at("skipped_steps").get<std::size_t>()});
  }
  if (f.failed) {
    f.failure = j.value("failure", "");
    return;
  }
  f.validation = j.at("validation").get<cal::PredictionSet>();
  f.id = j.at("id").get<EvalResult>();
  f.ood = j.at("ood").get<EvalResult>();
}

struct Stat {
  double mean = 0;
  double std = 0;
  std::size_t n = 0;

  bool operator==(const Stat&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Stat, mean, std, n)

/// Mean and sample standard deviation (k - 1 denominator, 0 for k = 1).
inline Stat aggregate_folds(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("aggregate_folds: no values");
  Stat s;
  s.n = values.size();
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / double(s.n);
  // The rounded mean can land a hair outside [min, max] when all values agree.
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  s.mean = std::clamp(s.mean, *lo, *hi);
  if (s.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / double(s.n - 1));
  }
  return s;
}

inline std::string format_stat(const Stat& s, int decimals = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", decimals, s.mean, decimals, s.std);
  return buf;
}

inline const char* kDatasets[] = {"id", "ood"};

/// Flat (name, value) view of one evaluation set. Ranking metrics appear once
/// since temperature scaling cannot change them.
inline std::vector<std::pair<std::string, double>> metric_values(const EvalResult& r,
                                                                 std::span<const cal::BinningMode> modes) {
  std::vector<std::pair<std::string, double>> out{
      {"auroc", r.pre.auroc}, {"balanced_accuracy", r.pre.balanced_accuracy}, {"nll", r.pre.nll}, {"nll_ts", r.post.nll}};
  for (auto m : modes) {
    const std::string key = cal::to_string(m);
    out.emplace_back("ece_" + key, r.pre.ece.at(key));
    out.emplace_back("ece_" + key + "_ts", r.post.ece.at(key));
  }
  return out;
}

inline std::vector<std::string> metric_names(std::span<const cal::BinningMode> modes) {
  std::vector<std::string> names{"auroc", "balanced_accuracy", "nll", "nll_ts"};
  for (auto m : modes) {
    names.push_back("ece_" + cal::to_string(m));
    names.push_back("ece_" + cal::to_string(m) + "_ts");
  }
  return names;
}

// model -> dataset -> metric -> stat
using AggregateResult = std::map<std::string, std::map<std::string, std::map<std::string, Stat>>>;

struct ExperimentResult {
  ExperimentConfig config;
  std::size_t n_test = 0;
  std::size_t n_ood = 0;
  std::vector<FoldResult> folds;  // model-major, then fold index
  AggregateResult aggregate;

  bool operator==(const ExperimentResult& o) const {
    return echo(config) == echo(o.config) && n_test == o.n_test && n_ood == o.n_ood && folds == o.folds &&
           aggregate == o.aggregate;
  }

  std::size_t failed_folds() const {
    return std::size_t(std::count_if(folds.begin(), folds.end(), [](const FoldResult& f) { return f.failed; }));
  }
};

/// Aggregates successful folds per model. Models without a single successful
/// fold get no entry.
inline AggregateResult aggregate_results(std::span<const FoldResult> folds, const ExperimentConfig& config) {
  AggregateResult out;
  for (auto kind : config.models) {
    const std::string model = agg::to_string(kind);
    for (const char* dataset : kDatasets) {
      std::map<std::string, std::vector<double>> values;
      for (const auto& f : folds) {
        if (f.model != kind || f.failed) continue;
        const EvalResult& r = std::string(dataset) == "id" ? f.id : f.ood;
        for (auto& [name, v] : metric_values(r, config.calibration.modes)) values[name].push_back(v);
      }
      for (auto& [name, v] : values) out[model][dataset][name] = aggregate_folds(v);
    }
  }
  return out;
}

inline void to_json(nlohmann::json& j, const ExperimentResult& r) {
  j = {{"format", "wsical-results"}, {"version", 1},       {"config", echo(r.config)}, {"n_test", r.n_test},
       {"n_ood", r.n_ood},           {"folds", r.folds}, {"aggregate", r.aggregate}};
}

inline void from_json(const nlohmann::json& j, ExperimentResult& r) {
  if (j.value("format", "") != "wsical-results") throw ConfigError("not a wsical results file");
  r = ExperimentResult{};
  r.config = parse_config(j.at("config"));
  r.n_test = j.at("n_test").get<std::size_t>();
  r.n_ood = j.at("n_ood").get<std::size_t>();
  r.folds = j.at("folds").get<std::vector<FoldResult>>();
  r.aggregate = j.at("aggregate").get<AggregateResult>();
}

}  // namespace wsical::harness
