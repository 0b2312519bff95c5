#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wsical/calibration/predictions.hpp"

namespace wsical::cal {

enum class BinningMode { kMaxConfidence, kPositiveClass };

inline std::string to_string(BinningMode mode) {
  return mode == BinningMode::kMaxConfidence ? "max_confidence" : "positive_class";
}

inline BinningMode parse_binning_mode(std::string_view text) {
  if (text == "max_confidence") return BinningMode::kMaxConfidence;
  if (text == "positive_class") return BinningMode::kPositiveClass;
  throw std::invalid_argument("unknown binning mode '" + std::string(text) + "'");
}

struct BinStats {
  std::size_t bin_index = 0;  // 1-based
  double lower = 0;
  double upper = 0;
  std::size_t count = 0;
  std::optional<double> mean_confidence;  // empty when count == 0
  std::optional<double> mean_accuracy;
  double proportion = 0;
};

/// Bin m (1-based) holds (m-1)/M <= c < m/M; c = 1 falls in bin M.
inline std::size_t bin_of(double c, std::size_t M) {
  auto m = std::size_t(std::floor(c * double(M)));
  if (m >= M) return M - 1;
  // c * M can round across a boundary; settle against the boundaries themselves.
  if (m > 0 && c < double(m) / double(M)) --m;
  if (m + 1 < M && c >= double(m + 1) / double(M)) ++m;
  return m;
}

/// Equal-width binning of confidences against 0/1 outcomes. In max-confidence
/// mode the outcome is "prediction correct"; in positive-class mode it is the
/// label itself.
inline std::vector<BinStats> bin_confidences(std::span<const double> confidences, std::span<const int> outcomes,
                                             std::size_t M) {
  if (confidences.size() != outcomes.size()) throw std::invalid_argument("ECE: confidences and outcomes differ in length");
  if (confidences.empty()) throw std::invalid_argument("ECE: empty input");
  if (M < 1) throw std::invalid_argument("ECE: need at least one bin");

  std::vector<double> conf_sum(M, 0.0), hit_sum(M, 0.0);
  std::vector<std::size_t> count(M, 0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("ECE: confidence " + std::to_string(c) + " outside [0, 1]");
    if (outcomes[i] != 0 && outcomes[i] != 1) throw std::invalid_argument("ECE: outcomes must be 0 or 1");
    const std::size_t b = bin_of(c, M);
    conf_sum[b] += c;
    hit_sum[b] += outcomes[i];
    ++count[b];
  }

  std::vector<BinStats> bins(M);
  const double n = double(confidences.size());
  for (std::size_t b = 0; b < M; ++b) {
    auto& s = bins[b];
    s.bin_index = b + 1;
    s.lower = double(b) / double(M);
    s.upper = double(b + 1) / double(M);
    s.count = count[b];
    s.proportion = double(count[b]) / n;
    if (count[b] > 0) {
      s.mean_confidence = conf_sum[b] / double(count[b]);
      s.mean_accuracy = hit_sum[b] / double(count[b]);
    }
  }
  return bins;
}

inline double ece_from_bins(std::span<const BinStats> bins) {
  double ece = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    ece += b.proportion * std::abs(*b.mean_confidence - *b.mean_accuracy);
  }
  return ece;
}

inline double compute_ece(std::span<const double> confidences, std::span<const int> correctness, std::size_t M = 10) {
  return ece_from_bins(bin_confidences(confidences, correctness, M));
}

/// Per-sample (confidence, outcome) pairs under the chosen mode.
inline void confidences_for(const PredictionSet& p, BinningMode mode, double T, std::vector<double>& conf,
                            std::vector<int>& outcome) {
  p.validate();
  check_temperature(T);
  conf.clear();
  outcome.clear();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Probs q = softmax(p.logits[i], T);
    if (mode == BinningMode::kMaxConfidence) {
      const int pred = q[1] > q[0] ? 1 : 0;
      conf.push_back(q[pred]);
      outcome.push_back(pred == p.labels[i] ? 1 : 0);
    } else {
      conf.push_back(q[1]);
      outcome.push_back(p.labels[i]);
    }
  }
}

inline std::vector<BinStats> reliability_bins(const PredictionSet& p, std::size_t M, BinningMode mode,
                                              std::optional<double> T = std::nullopt) {
  std::vector<double> conf;
  std::vector<int> outcome;
  confidences_for(p, mode, T.value_or(1.0), conf, outcome);
  return bin_confidences(conf, outcome, M);
}

inline double expected_calibration_error(const PredictionSet& p, std::size_t M, BinningMode mode, double T = 1.0) {
  return ece_from_bins(reliability_bins(p, M, mode, T));
}

}  // namespace wsical::cal
