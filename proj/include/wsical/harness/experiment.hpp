#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <spdlog/spdlog.h>

#include "wsical/aggregators/checkpoint.hpp"
#include "wsical/aggregators/model.hpp"
#include "wsical/aggregators/train.hpp"
#include "wsical/calibration/report.hpp"
#include "wsical/calibration/temperature.hpp"
#include "wsical/harness/config.hpp"
#include "wsical/harness/report.hpp"
#include "wsical/harness/results.hpp"
#include "wsical/slidedata/bagio.hpp"
#include "wsical/slidedata/splits.hpp"
#include "wsical/slidedata/synthetic.hpp"

namespace wsical::harness {

/// Every fold failed, or some other failure after training started
/// (exit code 2). Whatever could be written has been written.
class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Datasets {
  std::vector<data::FeatureBag> id;
  std::vector<data::FeatureBag> ood;
};

inline Datasets load_datasets(const DatasetSource& source) {
  Datasets d;
  if (source.synthetic) {
    d.id = data::generate_dataset(*source.synthetic, data::Variant::kInDistribution);
    d.ood = data::generate_dataset(*source.synthetic, data::Variant::kOutOfDistribution);
  } else {
    d.id = data::load_bag_manifest(source.id_manifest);
    d.ood = data::load_bag_manifest(source.ood_manifest);
  }
  if (d.id.empty()) throw data::DataError("in-distribution dataset is empty");
  if (d.ood.empty()) throw data::DataError("out-of-distribution dataset is empty");
  const std::size_t dim = d.id.front().dim;
  for (const auto* set : {&d.id, &d.ood}) {
    for (const auto& bag : *set) {
      if (bag.dim != dim) {
        throw data::DataError("bag '" + bag.slide_id + "' has feature dim " + std::to_string(bag.dim) + ", expected " +
                              std::to_string(dim));
      }
    }
  }
  std::vector<int> labels;
  for (const auto& bag : d.ood) labels.push_back(bag.label);
  if (!cal::has_both_classes(labels)) throw data::DataError("out-of-distribution dataset needs both classes");
  return d;
}

inline std::vector<const data::FeatureBag*> lookup(const std::vector<data::FeatureBag>& bags,
                                                   std::span<const std::string> ids) {
  std::unordered_map<std::string, const data::FeatureBag*> by_id;
  for (const auto& b : bags) by_id.emplace(b.slide_id, &b);
  std::vector<const data::FeatureBag*> out;
  for (const auto& id : ids) out.push_back(by_id.at(id));
  return out;
}

inline std::vector<data::FeatureBag> copy_bags(const std::vector<data::FeatureBag>& bags,
                                               std::span<const std::string> ids) {
  std::vector<data::FeatureBag> out;
  for (const auto* b : lookup(bags, ids)) out.push_back(*b);
  return out;
}

template <typename T>
cal::PredictionSet predict_all(const agg::Model<T>& model, std::span<const data::FeatureBag> bags) {
  cal::PredictionSet p;
  for (const auto& bag : bags) p.push_back(agg::predict(model, bag).logits, bag.label, bag.slide_id);
  return p;
}

inline MetricBlock metric_block(const cal::PredictionSet& p, const CalibrationConfig& c,
                                std::optional<double> T = std::nullopt) {
  MetricBlock b;
  for (auto mode : c.modes) {
    const auto r = cal::evaluate(p, c.M, mode, T);
    b.ece[cal::to_string(mode)] = r.ece;
    b.auroc = r.auroc;
    b.balanced_accuracy = r.balanced_accuracy;
    b.nll = r.nll;
  }
  return b;
}

inline EvalResult evaluate_set(cal::PredictionSet p, const CalibrationConfig& c, double T) {
  EvalResult r;
  r.pre = metric_block(p, c);
  r.post = metric_block(p, c, T);
  r.predictions = std::move(p);
  return r;
}

struct FoldRun {
  FoldResult result;
  std::optional<agg::Model<float>> model;
};

/// Train on one fold, keep the best epoch, fit T on that fold's validation
/// outputs only, then score the shared test set and the OOD set.
inline FoldRun run_fold(agg::ModelKind kind, std::size_t fold, const data::FoldSplit& split, const Datasets& data,
                        const ExperimentConfig& config) {
  FoldRun run;
  FoldResult& r = run.result;
  r.model = kind;
  r.fold = fold;
  const auto train = copy_bags(data.id, split.folds.at(fold).train_ids);
  const auto val = copy_bags(data.id, split.folds.at(fold).val_ids);

  agg::TrainConfig tc = config.train;
  tc.seed = config.seed + fold;
  auto trained = agg::train_model<float>(kind, train, val, tc, config.model);
  r.history = trained.history;
  r.best_epoch = trained.best_epoch;
  r.best_score = trained.best_score;
  r.score_name = trained.score_name;
  if (trained.failed) {
    r.failed = true;
    r.failure = trained.failure;
    return run;
  }

  r.validation = predict_all(trained.model, val);
  r.temperature = cal::fit_temperature(r.validation);
  const auto test = copy_bags(data.id, split.test_ids);
  r.id = evaluate_set(predict_all(trained.model, test), config.calibration, r.temperature);
  r.ood = evaluate_set(predict_all(trained.model, std::span<const data::FeatureBag>(data.ood)), config.calibration,
                       r.temperature);
  run.model = std::move(trained.model);
  return run;
}

inline FoldRun run_fold_guarded(agg::ModelKind kind, std::size_t fold, const data::FoldSplit& split,
                                const Datasets& data, const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  FoldRun run;
  try {
    run = run_fold(kind, fold, split, data, config);
  } catch (const std::exception& e) {
    run = FoldRun{};
    run.result.model = kind;
    run.result.fold = fold;
    run.result.failed = true;
    run.result.failure = e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (run.result.failed) {
    spdlog::warn("{} fold {} failed and is excluded from aggregation: {}", agg::to_string(kind), fold,
                 run.result.failure);
  } else {
    spdlog::info("{} fold {}: best epoch {} ({} {:.3f}), T = {:.3f}, ID AUROC {:.3f}, OOD AUROC {:.3f} [{:.1f}s]",
                 agg::to_string(kind), fold, run.result.best_epoch, run.result.score_name, run.result.best_score,
                 run.result.temperature, run.result.id.pre.auroc, run.result.ood.pre.auroc, secs);
  }
  return run;
}

inline data::FoldSplit make_experiment_splits(const Datasets& data, const ExperimentConfig& config) {
  return data::make_splits(std::span<const data::FeatureBag>(data.id), config.test_fraction, config.k, config.seed);
}

/// Full protocol. The test split is drawn once from the global seed; fold f
/// trains with seed + f. Folds run on `workers` threads and write into
/// pre-assigned slots, so the result does not depend on scheduling.
inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const fs::path out = config.out_dir;
  ensure_writable(out);

  const Datasets data = load_datasets(config.dataset);
  const data::FoldSplit split = make_experiment_splits(data, config);
  spdlog::info("{} ID slides ({} test, {} folds), {} OOD slides", data.id.size(), split.test_ids.size(), config.k,
               data.ood.size());

  struct Job {
    agg::ModelKind kind;
    std::size_t fold;
  };
  std::vector<Job> jobs;
  for (auto kind : config.models) {
    for (std::size_t f = 0; f < config.k; ++f) jobs.push_back({kind, f});
  }
  std::vector<FoldRun> runs(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      runs[i] = run_fold_guarded(jobs[i].kind, jobs[i].fold, split, data, config);
    }
  };
  const std::size_t n_threads = std::min(config.workers, jobs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ExperimentResult result;
  result.config = config;
  result.n_test = split.test_ids.size();
  result.n_ood = data.ood.size();
  for (auto& run : runs) result.folds.push_back(run.result);
  result.aggregate = aggregate_results(result.folds, config);

  if (config.save_checkpoints) {
    fs::create_directories(out / "checkpoints");
    for (const auto& run : runs) {
      if (!run.model) continue;
      const auto& r = run.result;
      nlohmann::json meta = {{"fold", r.fold},
                             {"seed", config.seed + r.fold},
                             {"best_epoch", r.best_epoch},
                             {"best_score", num(r.best_score)},
                             {"score_name", r.score_name},
                             {"temperature", r.temperature}};
      agg::save_checkpoint(out / "checkpoints" / (agg::to_string(r.model) + "_fold" + std::to_string(r.fold) + ".sckp"),
                           *run.model, meta);
    }
  }

  if (result.failed_folds() == result.folds.size()) {
    write_results_json(out / "results.json", result);
    throw ExperimentError("every fold failed to train; see " + (out / "results.json").string());
  }
  emit_report(result, out);
  return result;
}

}  // namespace wsical::harness
