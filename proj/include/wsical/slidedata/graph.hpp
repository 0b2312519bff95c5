#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "wsical/slidedata/bag.hpp"

namespace wsical::data {

/// Undirected patch adjacency. Each pair is stored once as (i, j) with i < j,
/// sorted; self-loops are a flag rather than explicit pairs.
struct EdgeList {
  std::size_t n_nodes = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  bool self_loops = false;

  bool operator==(const EdgeList&) const = default;
};

/// Directed edge arrays for message passing: message flows src -> dst.
/// Contains both directions of every pair, plus (i, i) when self-loops are on.
struct MessageEdges {
  std::size_t n_nodes = 0;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
};

/// Connects patches whose grid coordinates differ by at most 1 in each axis
/// (connectivity 8) or by exactly 1 in one axis (connectivity 4).
inline EdgeList build_patch_graph(std::span<const GridCoord> coords, int connectivity = 8, bool self_loops = true) {
  if (connectivity != 4 && connectivity != 8) throw std::invalid_argument("build_patch_graph: connectivity must be 4 or 8");
  std::map<GridCoord, std::uint32_t> index;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!index.emplace(coords[i], std::uint32_t(i)).second) {
      throw DataError("build_patch_graph: duplicate coordinate (" + std::to_string(coords[i].row) + ", " +
                      std::to_string(coords[i].col) + ")");
    }
  }
  // Half of the neighbourhood; the other half is found from the other end.
  static constexpr std::pair<int, int> kForward8[] = {{0, 1}, {1, -1}, {1, 0}, {1, 1}};
  static constexpr std::pair<int, int> kForward4[] = {{0, 1}, {1, 0}};
  std::span<const std::pair<int, int>> forward =
      connectivity == 8 ? std::span<const std::pair<int, int>>(kForward8) : std::span<const std::pair<int, int>>(kForward4);

  EdgeList out;
  out.n_nodes = coords.size();
  out.self_loops = self_loops;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    for (auto [dr, dc] : forward) {
      const std::int64_t r = std::int64_t(coords[i].row) + dr;
      const std::int64_t c = std::int64_t(coords[i].col) + dc;
      if (r < 0 || c < 0 || r > UINT32_MAX || c > UINT32_MAX) continue;
      auto it = index.find(GridCoord{std::uint32_t(r), std::uint32_t(c)});
      if (it == index.end()) continue;
      const auto a = std::uint32_t(i), b = it->second;
      out.pairs.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  return out;
}

inline MessageEdges to_message_edges(const EdgeList& edges) {
  MessageEdges out;
  out.n_nodes = edges.n_nodes;
  const std::size_t total = 2 * edges.pairs.size() + (edges.self_loops ? edges.n_nodes : 0);
  out.src.reserve(total);
  out.dst.reserve(total);
  for (auto [a, b] : edges.pairs) {
    if (a >= edges.n_nodes || b >= edges.n_nodes) throw std::out_of_range("to_message_edges: node index out of range");
    out.src.push_back(a);
    out.dst.push_back(b);
    out.src.push_back(b);
    out.dst.push_back(a);
  }
  if (edges.self_loops) {
    for (std::size_t i = 0; i < edges.n_nodes; ++i) {
      out.src.push_back(i);
      out.dst.push_back(i);
    }
  }
  return out;
}

}  // namespace wsical::data
