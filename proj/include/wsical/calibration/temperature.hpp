#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "wsical/calibration/metrics.hpp"
#include "wsical/calibration/predictions.hpp"

namespace wsical::cal {

struct TemperatureSearch {
  double t_min = 0.05;
  double t_max = 20.0;
  std::size_t grid_points = 241;
  std::size_t golden_iterations = 60;
};

/// Minimizes validation NLL over T. The search works in log T: a coarse
/// log-spaced grid locates the basin, golden-section search refines within the
/// neighbouring grid cells. T = 1 is kept unless something strictly beats it,
/// so a flat objective returns exactly 1.
inline double fit_temperature(const PredictionSet& validation, const TemperatureSearch& search = {}) {
  validation.validate();
  if (validation.empty()) throw std::invalid_argument("fit_temperature: empty validation set");
  if (!has_both_classes(validation.labels)) {
    throw std::invalid_argument("fit_temperature: validation set must contain both classes");
  }
  if (search.grid_points < 2 || !(search.t_min > 0) || !(search.t_max > search.t_min)) {
    throw std::invalid_argument("fit_temperature: bad search range");
  }

  const auto objective = [&](double u) { return nll(validation, std::exp(u)); };
  const double lo = std::log(search.t_min), hi = std::log(search.t_max);
  const double step = (hi - lo) / double(search.grid_points - 1);

  double best_t = 1.0;
  double best_f = nll(validation, 1.0);
  std::size_t best_i = search.grid_points;
  for (std::size_t i = 0; i < search.grid_points; ++i) {
    const double f = objective(lo + step * double(i));
    if (f < best_f) {
      best_f = f;
      best_i = i;
    }
  }
  if (best_i == search.grid_points) return best_t;
  best_t = std::exp(lo + step * double(best_i));

  double a = lo + step * double(best_i == 0 ? 0 : best_i - 1);
  double b = lo + step * double(std::min(best_i + 1, search.grid_points - 1));
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - ratio * (b - a), d = a + ratio * (b - a);
  double fc = objective(c), fd = objective(d);
  for (std::size_t it = 0; it < search.golden_iterations; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = objective(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = objective(d);
    }
  }
  const double u = 0.5 * (a + b);
  if (const double f = objective(u); f < best_f) {
    best_f = f;
    best_t = std::exp(u);
  }
  return best_t;
}

}  // namespace wsical::cal
