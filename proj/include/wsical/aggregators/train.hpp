#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "wsical/aggregators/config.hpp"
#include "wsical/aggregators/model.hpp"
#include "wsical/calibration/metrics.hpp"
#include "wsical/diffcore/optim.hpp"
#include "wsical/slidedata/bag.hpp"
#include "wsical/slidedata/splits.hpp"

namespace wsical::agg {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_score = 0;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
  bool operator==(const EpochRecord&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EpochRecord, epoch, train_loss, val_score, steps, skipped_steps)

template <typename T>
struct TrainResult {
  Model<T> model;                   // parameters of the selected epoch
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;       // 0: untrained initial parameters
  double best_score = std::numeric_limits<double>::quiet_NaN();
  std::string score_name = "balanced_accuracy";
  bool failed = false;
  std::string failure;
};

/// First epoch (1-based) attaining the highest score; 0 for an empty history.
/// NaN scores never win.
inline std::size_t select_best_epoch(std::span<const double> scores) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] > best_score) {
      best_score = scores[i];
      best = i + 1;
    }
  }
  return best;
}

/// Balanced accuracy on the validation bags, or plain accuracy when the
/// validation set holds a single class (small folds can).
template <typename T>
double validation_score(const Model<T>& model, std::span<const data::FeatureBag> val, std::string* score_name = nullptr) {
  std::vector<int> pred, labels;
  for (const auto& bag : val) {
    const auto out = predict(model, bag);
    pred.push_back(out.logits[1] > out.logits[0] ? 1 : 0);
    labels.push_back(bag.label);
  }
  if (cal::has_both_classes(labels)) {
    if (score_name) *score_name = "balanced_accuracy";
    return cal::balanced_accuracy(pred, labels);
  }
  if (score_name) *score_name = "accuracy";
  return cal::accuracy(pred, labels);
}

/// One slide per optimisation step with Adam; the training ids are
/// class-balanced by oversampling. After each epoch the model is scored on
/// the validation bags and the best epoch's parameters are kept.
template <typename T = float>
TrainResult<T> train_model(ModelKind kind, std::span<const data::FeatureBag> train, std::span<const data::FeatureBag> val,
                           const TrainConfig& tc, const ModelConfig& mc) {
  tc.validate();
  mc.validate();
  if (train.empty()) throw std::invalid_argument("train_model: empty training set");
  if (val.empty()) throw std::invalid_argument("train_model: empty validation set");
  const std::size_t dim = train.front().dim;

  std::vector<std::string> ids;
  std::vector<int> labels;
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < train.size(); ++i) {
    check_bag(train[i], dim, "train_model");
    ids.push_back(train[i].slide_id);
    labels.push_back(train[i].label);
    if (!by_id.emplace(train[i].slide_id, i).second) {
      throw std::invalid_argument("train_model: duplicate training slide '" + train[i].slide_id + "'");
    }
  }
  if (!cal::has_both_classes(labels)) throw std::invalid_argument("train_model: training set must contain both classes");
  for (const auto& bag : val) check_bag(bag, dim, "train_model");

  TrainResult<T> result;
  result.model = make_model<T>(kind, dim, mc, tc.seed);
  Model<T> model = result.model;
  ad::Adam<T> adam(model.params, ad::AdamConfig{tc.learning_rate});
  std::mt19937_64 subsample_rng(tc.seed ^ 0x9e3779b97f4a7c15ull);
  std::mt19937_64 order_rng(tc.seed + 1);

  std::vector<std::string> order;
  std::size_t total_steps = 0, total_skipped = 0;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    if (epoch == 1 || tc.resample_per_epoch) {
      order = data::balance_training_set(ids, labels, tc.seed * 1000003ull + epoch);
    } else {
      std::shuffle(order.begin(), order.end(), order_rng);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0;
    std::size_t loss_count = 0;
    for (const auto& id : order) {
      const auto& bag = train[by_id.at(id)];
      Tape<T> tape;
      auto f = forward(tape, kind, dim, model.config, model.params, bag, &subsample_rng);
      const double loss = double(f.loss.value()[0]);
      ++rec.steps;
      if (!std::isfinite(loss)) {
        spdlog::warn("{} epoch {}: non-finite loss on '{}', step skipped", to_string(kind), epoch, bag.slide_id);
        ++rec.skipped_steps;
        model.params.zero_grad();
        continue;
      }
      tape.backward(f.loss);
      if (tc.grad_clip > 0) ad::clip_grad_norm(model.params, tc.grad_clip);
      if (!adam.step(model.params)) {
        ++rec.skipped_steps;
        continue;
      }
      loss_sum += loss;
      ++loss_count;
    }
    rec.train_loss = loss_count ? loss_sum / double(loss_count) : std::numeric_limits<double>::quiet_NaN();
    rec.val_score = validation_score(model, val, &result.score_name);
    total_steps += rec.steps;
    total_skipped += rec.skipped_steps;
    spdlog::debug("{} epoch {}/{}: loss {:.4f}, validation {} {:.4f}", to_string(kind), epoch, tc.epochs,
                  rec.train_loss, result.score_name, rec.val_score);

    result.history.push_back(rec);
    // Strict comparison keeps the earliest of tied epochs.
    const bool improves = result.best_epoch == 0 ? !std::isnan(rec.val_score) : rec.val_score > result.best_score;
    if (improves && loss_count > 0) {
      result.best_score = rec.val_score;
      result.best_epoch = epoch;
      result.model.params = model.params;
      result.model.params.zero_grad();
    }
  }
  if (total_steps > 0 && total_skipped == total_steps) {
    result.failed = true;
    result.failure = "every optimisation step produced a non-finite loss or gradient";
  }
  return result;
}

}  // namespace wsical::agg
