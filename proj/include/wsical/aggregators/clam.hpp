#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "wsical/aggregators/config.hpp"
#include "wsical/aggregators/layers.hpp"

namespace wsical::agg {

template <typename T>
void init_clam(ParamSet<T>& ps, std::size_t input_dim, const ClamConfig& c, std::mt19937_64& rng) {
  add_linear(ps, "clam.fc", input_dim, c.embed_dim, rng);
  add_linear(ps, "clam.attention_a", c.embed_dim, c.attention_hidden, rng);
  add_linear(ps, "clam.attention_b", c.embed_dim, c.attention_hidden, rng);
  add_linear(ps, "clam.attention_c", c.attention_hidden, 1, rng);
  add_linear(ps, "clam.classifier", c.embed_dim, 2, rng);
  add_linear(ps, "clam.instance", c.embed_dim, 2, rng);
}

template <typename T>
struct ClamGraph {
  Var<T> hidden;     // n x embed_dim
  Var<T> attention;  // 1 x n
  Var<T> embedding;  // 1 x embed_dim
  Var<T> logits;     // 1 x 2
  // Top-k most attended patches first, then the top-k least attended.
  std::vector<std::size_t> instance_index;
  std::optional<Var<T>> instance_logits;
};

/// Number of patches per side of the instance loss: k, capped so the two
/// sides never overlap.
inline std::size_t clam_instance_k(std::size_t n_patches, const ClamConfig& c) {
  return std::min(c.instance_top_k, n_patches / 2);
}

template <typename T, typename P>
ClamGraph<T> clam_graph(Tape<T>& tape, P& ps, const Var<T>& x, const ClamConfig& c) {
  ClamGraph<T> g;
  g.hidden = ad::relu(linear(tape, ps, "clam.fc", x));
  // Gated attention: tanh branch modulated by a sigmoid gate.
  auto a = ad::tanh(linear(tape, ps, "clam.attention_a", g.hidden));
  auto b = ad::sigmoid(linear(tape, ps, "clam.attention_b", g.hidden));
  auto scores = linear(tape, ps, "clam.attention_c", ad::mul(a, b));
  g.attention = ad::softmax_rows(ad::transpose(scores));
  g.embedding = ad::matmul(g.attention, g.hidden);
  g.logits = linear(tape, ps, "clam.classifier", g.embedding);

  const std::size_t n = x.rows();
  const std::size_t k = clam_instance_k(n, c);
  if (k > 0) {
    const auto& w = g.attention.value().data;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return w[i] > w[j]; });
    g.instance_index.assign(order.begin(), order.begin() + std::ptrdiff_t(k));
    g.instance_index.insert(g.instance_index.end(), order.end() - std::ptrdiff_t(k), order.end());
    g.instance_logits = linear(tape, ps, "clam.instance", ad::gather_rows(g.hidden, g.instance_index));
  }
  return g;
}

/// Weighted sum of the slide and instance losses.
inline double clam_total_loss(double slide_loss, double instance_loss, const ClamConfig& c) {
  if (!std::isfinite(slide_loss) || !std::isfinite(instance_loss)) {
    throw std::invalid_argument("clam_total_loss: losses must be finite");
  }
  if (slide_loss < 0 || instance_loss < 0) throw std::invalid_argument("clam_total_loss: losses must be nonnegative");
  return c.c1 * slide_loss + c.c2 * instance_loss;
}

/// The highest-attention patches are pseudo-labelled with the slide class,
/// the lowest-attention ones with the other class. Bags of one patch carry no
/// instance term.
template <typename T>
Var<T> clam_loss(const ClamGraph<T>& g, int label, const ClamConfig& c) {
  auto slide = ad::cross_entropy(g.logits, {std::size_t(label)});
  if (!g.instance_logits) return ad::scale(slide, T(c.c1));
  const std::size_t k = g.instance_index.size() / 2;
  std::vector<std::size_t> targets(2 * k, std::size_t(1 - label));
  std::fill_n(targets.begin(), k, std::size_t(label));
  auto instance = ad::cross_entropy(*g.instance_logits, std::move(targets));
  return ad::add(ad::scale(slide, T(c.c1)), ad::scale(instance, T(c.c2)));
}

}  // namespace wsical::agg
