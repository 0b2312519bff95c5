#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsical/slidedata/bag.hpp"

namespace wsical::data {

struct Fold {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  bool operator==(const Fold&) const = default;
};

/// Held-out test ids plus k (train, validation) partitions of the rest.
struct FoldSplit {
  std::vector<std::string> test_ids;
  std::vector<Fold> folds;
  bool operator==(const FoldSplit&) const = default;
};

/// Stratified split. The test set takes round(n * test_fraction) slides,
/// apportioned across classes by largest remainder; the remaining pool is
/// dealt class by class round-robin into k validation folds, so fold sizes
/// differ by at most one and the larger folds come first.
inline FoldSplit make_splits(std::span<const std::string> ids, std::span<const int> labels, double test_fraction,
                             std::size_t k, std::uint64_t seed) {
  if (ids.size() != labels.size()) throw std::invalid_argument("make_splits: ids and labels differ in length");
  if (k < 2) throw std::invalid_argument("make_splits: need k >= 2");
  if (ids.size() < k + 1) {
    throw std::invalid_argument("make_splits: need at least k + 1 = " + std::to_string(k + 1) + " slides, got " +
                                std::to_string(ids.size()));
  }
  if (!(test_fraction >= 0 && test_fraction < 1)) throw std::invalid_argument("make_splits: test_fraction outside [0, 1)");

  std::array<std::vector<std::string>, 2> by_class;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (labels[i] != kMss && labels[i] != kMsi) throw std::invalid_argument("make_splits: label must be 0 or 1");
    by_class[std::size_t(labels[i])].push_back(ids[i]);
  }
  for (std::size_t c = 0; c < 2; ++c) {
    if (by_class[c].size() < k) {
      throw std::invalid_argument("make_splits: class " + std::to_string(c) + " has " +
                                  std::to_string(by_class[c].size()) + " slides, fewer than k = " + std::to_string(k));
    }
  }

  std::mt19937_64 rng(seed);
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng);

  const auto n_test = std::size_t(std::llround(double(ids.size()) * test_fraction));
  std::array<std::size_t, 2> quota{};
  std::array<double, 2> remainder{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < 2; ++c) {
    const double exact = double(by_class[c].size()) * double(n_test) / double(ids.size());
    quota[c] = std::size_t(std::floor(exact));
    remainder[c] = exact - double(quota[c]);
    assigned += quota[c];
  }
  while (assigned < n_test) {
    const std::size_t c = remainder[1] > remainder[0] ? 1 : 0;
    ++quota[c];
    remainder[c] = -1;
    ++assigned;
  }

  FoldSplit split;
  std::vector<std::string> pool;
  for (std::size_t c = 0; c < 2; ++c) {
    split.test_ids.insert(split.test_ids.end(), by_class[c].begin(), by_class[c].begin() + std::ptrdiff_t(quota[c]));
    pool.insert(pool.end(), by_class[c].begin() + std::ptrdiff_t(quota[c]), by_class[c].end());
  }

  std::vector<std::vector<std::string>> val(k);
  for (std::size_t i = 0; i < pool.size(); ++i) val[i % k].push_back(pool[i]);
  split.folds.resize(k);
  for (std::size_t f = 0; f < k; ++f) {
    split.folds[f].val_ids = val[f];
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) split.folds[f].train_ids.insert(split.folds[f].train_ids.end(), val[g].begin(), val[g].end());
    }
  }
  return split;
}

inline FoldSplit make_splits(std::span<const FeatureBag> bags, double test_fraction, std::size_t k, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& b : bags) {
    ids.push_back(b.slide_id);
    labels.push_back(b.label);
  }
  return make_splits(ids, labels, test_fraction, k, seed);
}

/// Oversamples the minority class with replacement until both classes have
/// as many entries as the majority, then shuffles.
inline std::vector<std::string> balance_training_set(std::span<const std::string> ids, std::span<const int> labels,
                                                     std::uint64_t seed) {
  if (ids.size() != labels.size()) throw std::invalid_argument("balance_training_set: ids and labels differ in length");
  std::array<std::vector<std::string>, 2> by_class;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (labels[i] != kMss && labels[i] != kMsi) throw std::invalid_argument("balance_training_set: label must be 0 or 1");
    by_class[std::size_t(labels[i])].push_back(ids[i]);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw std::invalid_argument("balance_training_set: both classes must be present");
  }
  std::mt19937_64 rng(seed);
  const std::size_t minority = by_class[1].size() < by_class[0].size() ? 1 : 0;
  const std::size_t target = std::max(by_class[0].size(), by_class[1].size());
  std::vector<std::string> out(ids.begin(), ids.end());
  std::uniform_int_distribution<std::size_t> pick(0, by_class[minority].size() - 1);
  for (std::size_t i = by_class[minority].size(); i < target; ++i) out.push_back(by_class[minority][pick(rng)]);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace wsical::data
