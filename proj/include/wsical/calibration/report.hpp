#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsical/calibration/ece.hpp"
#include "wsical/calibration/metrics.hpp"
#include "wsical/calibration/predictions.hpp"

namespace wsical::cal {

struct CalibrationReport {
  double ece = 0;
  std::vector<BinStats> bins;
  BinningMode binning_mode = BinningMode::kMaxConfidence;
  std::size_t M = 10;
  double auroc = 0;
  double balanced_accuracy = 0;
  double nll = 0;
  std::optional<double> temperature;
};

/// All metrics for one prediction set, optionally after temperature scaling.
/// Ranking and argmax metrics use the logit margin, which temperature cannot reorder.
inline CalibrationReport evaluate(const PredictionSet& p, std::size_t M, BinningMode mode,
                                  std::optional<double> T = std::nullopt) {
  p.validate();
  const double t = T.value_or(1.0);
  CalibrationReport r;
  r.M = M;
  r.binning_mode = mode;
  r.temperature = T;
  r.bins = reliability_bins(p, M, mode, t);
  r.ece = ece_from_bins(r.bins);
  r.auroc = auroc(margins(p, t), p.labels);
  r.balanced_accuracy = balanced_accuracy(predicted_labels(p), p.labels);
  r.nll = nll(p, t);
  return r;
}

inline std::string reliability_csv(std::span<const BinStats> bins) {
  std::string out = "bin_index,lower,upper,count,mean_confidence,mean_accuracy,proportion\n";
  char line[256];
  for (const auto& b : bins) {
    std::string conf, acc;
    if (b.mean_confidence) {
      std::snprintf(line, sizeof line, "%.6f", *b.mean_confidence);
      conf = line;
      std::snprintf(line, sizeof line, "%.6f", *b.mean_accuracy);
      acc = line;
    }
    std::snprintf(line, sizeof line, "%zu,%.4f,%.4f,%zu,%s,%s,%.6f\n", b.bin_index, b.lower, b.upper, b.count,
                  conf.c_str(), acc.c_str(), b.proportion);
    out += line;
  }
  return out;
}

inline void write_reliability_csv(const std::filesystem::path& path, std::span<const BinStats> bins) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << reliability_csv(bins);
}

}  // namespace wsical::cal
