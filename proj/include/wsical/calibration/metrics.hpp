#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "wsical/calibration/predictions.hpp"

namespace wsical::cal {

namespace detail {

inline void require_both_classes(std::span<const int> labels, const char* who) {
  bool has[2] = {false, false};
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument(std::string(who) + ": labels must be 0 or 1");
    has[y] = true;
  }
  if (!has[0] || !has[1]) throw std::invalid_argument(std::string(who) + ": both classes must be present");
}

}  // namespace detail

/// Mean negative log-likelihood of the true class under softmax(z / T).
inline double nll(std::span<const Logits> logits, std::span<const int> labels, double T = 1.0) {
  check_temperature(T);
  if (logits.size() != labels.size()) throw std::invalid_argument("nll: logits and labels differ in length");
  if (logits.empty()) throw std::invalid_argument("nll: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double a = logits[i][0] / T, b = logits[i][1] / T;
    const double m = std::max(a, b);
    const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    total += lse - (labels[i] == 1 ? b : a);
  }
  return total / double(logits.size());
}

inline double nll(const PredictionSet& p, double T = 1.0) { return nll(p.logits, p.labels, T); }

/// Mann-Whitney AUROC; tied positive/negative pairs count one half.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auroc: scores and labels differ in length");
  detail::require_both_classes(labels, "auroc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * double(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const double n_neg = double(scores.size() - n_pos);
  const double u = rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
  return u / (double(n_pos) * n_neg);
}

/// Mean of per-class recall.
inline double balanced_accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw std::invalid_argument("balanced_accuracy: lengths differ");
  detail::require_both_classes(labels, "balanced_accuracy");
  double hit[2] = {0, 0}, total[2] = {0, 0};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total[labels[i]] += 1;
    if (predicted[i] == labels[i]) hit[labels[i]] += 1;
  }
  return 0.5 * (hit[0] / total[0] + hit[1] / total[1]);
}

inline double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw std::invalid_argument("accuracy: bad lengths");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return double(hit) / double(labels.size());
}

inline bool has_both_classes(std::span<const int> labels) {
  return std::find(labels.begin(), labels.end(), 0) != labels.end() &&
         std::find(labels.begin(), labels.end(), 1) != labels.end();
}

}  // namespace wsical::cal
