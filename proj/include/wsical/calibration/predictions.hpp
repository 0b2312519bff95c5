#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wsical::cal {

using Logits = std::array<double, 2>;
using Probs = std::array<double, 2>;

/// Two-class slide logits with their labels and ids, one row per slide.
struct PredictionSet {
  std::vector<Logits> logits;
  std::vector<int> labels;
  std::vector<std::string> slide_ids;

  std::size_t size() const { return logits.size(); }
  bool empty() const { return logits.empty(); }

  void push_back(const Logits& z, int label, std::string id) {
    logits.push_back(z);
    labels.push_back(label);
    slide_ids.push_back(std::move(id));
  }

  void append(const PredictionSet& other) {
    logits.insert(logits.end(), other.logits.begin(), other.logits.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    slide_ids.insert(slide_ids.end(), other.slide_ids.begin(), other.slide_ids.end());
  }

  void validate() const {
    if (labels.size() != logits.size() || slide_ids.size() != logits.size()) {
      throw std::invalid_argument("PredictionSet: " + std::to_string(logits.size()) + " logit rows, " +
                                  std::to_string(labels.size()) + " labels, " + std::to_string(slide_ids.size()) +
                                  " ids");
    }
    for (std::size_t i = 0; i < logits.size(); ++i) {
      if (!std::isfinite(logits[i][0]) || !std::isfinite(logits[i][1])) {
        throw std::invalid_argument("PredictionSet: non-finite logits for " + slide_ids[i]);
      }
      if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("PredictionSet: label must be 0 or 1");
    }
  }

  bool operator==(const PredictionSet&) const = default;
};

inline void check_temperature(double T) {
  if (!(T > 0) || !std::isfinite(T)) throw std::invalid_argument("temperature must be positive and finite");
}

inline Probs softmax(const Logits& z, double T = 1.0) {
  const double a = z[0] / T, b = z[1] / T;
  const double m = std::max(a, b);
  const double ea = std::exp(a - m), eb = std::exp(b - m);
  return {ea / (ea + eb), eb / (ea + eb)};
}

inline std::vector<Probs> apply_temperature(std::span<const Logits> logits, double T) {
  check_temperature(T);
  std::vector<Probs> out;
  out.reserve(logits.size());
  for (const auto& z : logits) out.push_back(softmax(z, T));
  return out;
}

/// (z1 - z0) / T. Monotone in the positive-class probability but never
/// saturates, so it is the score used for ranking metrics.
inline std::vector<double> margins(const PredictionSet& p, double T = 1.0) {
  check_temperature(T);
  std::vector<double> out;
  out.reserve(p.size());
  for (const auto& z : p.logits) out.push_back((z[1] - z[0]) / T);
  return out;
}

/// Argmax prediction; an exact tie goes to class 0.
inline std::vector<int> predicted_labels(const PredictionSet& p) {
  std::vector<int> out;
  out.reserve(p.size());
  for (const auto& z : p.logits) out.push_back(z[1] > z[0] ? 1 : 0);
  return out;
}

}  // namespace wsical::cal
