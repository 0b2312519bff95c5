#pragma once

#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wsical::data {

/// Malformed or inconsistent slide data (files, manifests, bag invariants).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kMss = 0;
inline constexpr int kMsi = 1;

struct GridCoord {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  auto operator<=>(const GridCoord&) const = default;
};

/// One slide: n_patches feature rows of width dim, one grid cell per patch,
/// and the slide label.
struct FeatureBag {
  std::string slide_id;
  int label = kMss;
  std::size_t dim = 0;
  std::vector<float> features;  // n_patches x dim, row-major
  std::vector<GridCoord> coords;

  std::size_t n_patches() const { return coords.size(); }

  std::span<const float> patch(std::size_t i) const {
    return std::span<const float>(features).subspan(i * dim, dim);
  }

  void validate() const {
    const std::string where = "bag '" + slide_id + "'";
    if (label != kMss && label != kMsi) {
      throw DataError(where + ": label must be 0 or 1, got " + std::to_string(label));
    }
    if (coords.empty()) throw DataError(where + ": no patches");
    if (dim == 0) throw DataError(where + ": zero feature dimension");
    if (features.size() != coords.size() * dim) {
      throw DataError(where + ": " + std::to_string(features.size()) + " feature values for " +
                      std::to_string(coords.size()) + " patches of dim " + std::to_string(dim));
    }
    for (float v : features) {
      if (!std::isfinite(v)) throw DataError(where + ": non-finite feature value");
    }
    std::set<GridCoord> seen(coords.begin(), coords.end());
    if (seen.size() != coords.size()) throw DataError(where + ": duplicate patch coordinates");
  }

  bool operator==(const FeatureBag&) const = default;
};

/// Bag restricted to the given patch rows, in the given order.
inline FeatureBag select_patches(const FeatureBag& bag, std::span<const std::size_t> rows) {
  FeatureBag out;
  out.slide_id = bag.slide_id;
  out.label = bag.label;
  out.dim = bag.dim;
  out.features.reserve(rows.size() * bag.dim);
  out.coords.reserve(rows.size());
  for (std::size_t r : rows) {
    auto p = bag.patch(r);
    out.features.insert(out.features.end(), p.begin(), p.end());
    out.coords.push_back(bag.coords.at(r));
  }
  return out;
}

}  // namespace wsical::data
