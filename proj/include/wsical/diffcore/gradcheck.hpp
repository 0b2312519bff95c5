#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsical/diffcore/params.hpp"
#include "wsical/diffcore/tape.hpp"

namespace wsical::ad {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-3;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  // 0 checks every entry; otherwise a seeded random subset of this size per tensor.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
  }
  double max_rel_error() const {
    double m = 0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
};

/// Compares the tape gradient of a scalar loss against central finite
/// differences. `loss` rebuilds the forward pass: (Tape<double>&,
/// ParamSet<double>&) -> Var<double> holding one value.
template <typename LossFn>
GradCheckReport check_gradients(LossFn&& loss, ParamSet<double>& params, const GradCheckOptions& opt = {}) {
  if (!(opt.step > 0) || !(opt.tolerance > 0)) {
    throw std::invalid_argument("check_gradients: step and tolerance must be positive");
  }
  params.zero_grad();
  {
    Tape<double> tape;
    Var<double> out = loss(tape, params);
    tape.backward(out);
  }
  auto evaluate = [&]() {
    Tape<double> tape;
    return loss(tape, params).value()[0];
  };

  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& entry = params.entry(p);
    std::vector<std::size_t> idx(entry.value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_entries_per_param && idx.size() > opt.max_entries_per_param) {
      std::vector<std::size_t> picked;
      std::sample(idx.begin(), idx.end(), std::back_inserter(picked), opt.max_entries_per_param, rng);
      idx = std::move(picked);
    }
    GradCheckEntry result{entry.name};
    for (std::size_t j : idx) {
      const double original = entry.value.data[j];
      entry.value.data[j] = original + opt.step;
      const double up = evaluate();
      entry.value.data[j] = original - opt.step;
      const double down = evaluate();
      entry.value.data[j] = original;
      const double numeric = (up - down) / (2 * opt.step);
      const double analytic = entry.grad.data[j];
      const double abs_err = std::abs(analytic - numeric);
      const double rel_err = abs_err / std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, rel_err);
      ++result.checked;
    }
    result.passed = result.max_rel_error < opt.tolerance;
    report.entries.push_back(std::move(result));
  }
  params.zero_grad();
  return report;
}

}  // namespace wsical::ad
