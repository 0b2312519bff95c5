#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsical/slidedata/bag.hpp"

namespace wsical::data {

/// Parameters of the synthetic slide generator. MSI slides carry
/// `signal_fraction` of their patches shifted by `signal_shift` on the first
/// ceil(dim / 8) feature dimensions; everything else is standard normal.
struct DatasetSpec {
  std::size_t n_slides = 200;
  double msi_prevalence = 0.5;
  std::size_t patches_min = 100;
  std::size_t patches_max = 400;
  std::size_t feature_dim = 64;
  double signal_fraction = 0.25;
  double signal_shift = 2.0;
  double ood_shift = 0.5;
  std::size_t n_ood_slides = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_slides == 0) throw std::invalid_argument("dataset spec: n_slides must be positive");
    if (feature_dim == 0) throw std::invalid_argument("dataset spec: feature_dim must be positive");
    if (patches_min == 0 || patches_min > patches_max) {
      throw std::invalid_argument("dataset spec: need 1 <= patches_min <= patches_max");
    }
    if (!(msi_prevalence >= 0 && msi_prevalence <= 1)) {
      throw std::invalid_argument("dataset spec: msi_prevalence outside [0, 1]");
    }
    if (!(signal_fraction >= 0 && signal_fraction <= 1)) {
      throw std::invalid_argument("dataset spec: signal_fraction outside [0, 1]");
    }
    if (!std::isfinite(signal_shift) || !std::isfinite(ood_shift)) {
      throw std::invalid_argument("dataset spec: shifts must be finite");
    }
  }

  std::size_t signal_dims() const { return (feature_dim + 7) / 8; }
};

enum class Variant { kInDistribution, kOutOfDistribution };

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, Variant variant, std::uint64_t index) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32),
                    std::uint32_t(variant == Variant::kInDistribution ? 0x1d : 0x00d),
                    std::uint32_t(index), std::uint32_t(index >> 32)};
  return std::mt19937_64(seq);
}

/// Connected blob of n distinct cells grown from a seed cell by repeatedly
/// annexing a random 4-neighbour of the region, shifted to start at (0, 0).
inline std::vector<GridCoord> grow_region(std::size_t n, std::mt19937_64& rng) {
  const auto origin = std::uint32_t(n) + 1;  // no growth path can reach below zero
  std::set<GridCoord> queued;
  std::vector<GridCoord> frontier{{origin, origin}};
  std::vector<GridCoord> cells;
  queued.insert(frontier.front());
  while (cells.size() < n) {
    std::uniform_int_distribution<std::size_t> pick(0, frontier.size() - 1);
    const std::size_t i = pick(rng);
    const GridCoord c = frontier[i];
    frontier[i] = frontier.back();
    frontier.pop_back();
    cells.push_back(c);
    const GridCoord next[4] = {{c.row + 1, c.col}, {c.row - 1, c.col}, {c.row, c.col + 1}, {c.row, c.col - 1}};
    for (const auto& nb : next) {
      if (queued.insert(nb).second) frontier.push_back(nb);
    }
  }
  std::uint32_t min_r = cells[0].row, min_c = cells[0].col;
  for (const auto& c : cells) {
    min_r = std::min(min_r, c.row);
    min_c = std::min(min_c, c.col);
  }
  for (auto& c : cells) {
    c.row -= min_r;
    c.col -= min_c;
  }
  return cells;
}

}  // namespace detail

/// Deterministic in (spec, variant). Label counts are exact:
/// round(n * prevalence) MSI slides, placed in random order.
inline std::vector<FeatureBag> generate_dataset(const DatasetSpec& spec,
                                                Variant variant = Variant::kInDistribution) {
  spec.validate();
  const bool ood = variant == Variant::kOutOfDistribution;
  const std::size_t n = ood ? spec.n_ood_slides : spec.n_slides;
  if (n == 0) throw std::invalid_argument("dataset spec: n_ood_slides must be positive");

  auto rng = detail::stream(spec.seed, variant, ~std::uint64_t{0});
  const auto n_msi = std::size_t(std::llround(double(n) * spec.msi_prevalence));
  std::vector<int> labels(n, kMss);
  std::fill_n(labels.begin(), n_msi, kMsi);
  std::shuffle(labels.begin(), labels.end(), rng);

  const std::size_t dim = spec.feature_dim;
  const std::size_t shifted_dims = spec.signal_dims();
  std::vector<FeatureBag> bags(n);
  for (std::size_t s = 0; s < n; ++s) {
    auto slide_rng = detail::stream(spec.seed, variant, s);
    FeatureBag& bag = bags[s];
    char id[32];
    std::snprintf(id, sizeof id, "%s_%05zu", ood ? "ood" : "id", s);
    bag.slide_id = id;
    bag.label = labels[s];
    bag.dim = dim;
    std::uniform_int_distribution<std::size_t> count(spec.patches_min, spec.patches_max);
    const std::size_t patches = count(slide_rng);
    bag.coords = detail::grow_region(patches, slide_rng);
    bag.features.resize(patches * dim);
    std::normal_distribution<float> noise(0.0f, 1.0f);
    for (float& v : bag.features) v = noise(slide_rng);
    if (bag.label == kMsi) {
      const auto n_signal = std::size_t(std::llround(double(patches) * spec.signal_fraction));
      std::vector<std::size_t> all(patches), chosen;
      for (std::size_t i = 0; i < patches; ++i) all[i] = i;
      std::sample(all.begin(), all.end(), std::back_inserter(chosen), n_signal, slide_rng);
      for (std::size_t p : chosen) {
        for (std::size_t d = 0; d < shifted_dims; ++d) bag.features[p * dim + d] += float(spec.signal_shift);
      }
    }
    if (ood) {
      for (float& v : bag.features) v += float(spec.ood_shift);
    }
  }
  return bags;
}

}  // namespace wsical::data
