#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "wsical/aggregators/config.hpp"
#include "wsical/aggregators/layers.hpp"

namespace wsical::agg {

template <typename T>
void init_transformer(ParamSet<T>& ps, std::size_t input_dim, const TransformerConfig& c, std::mt19937_64& rng) {
  const std::size_t e = c.embed_dim;
  add_linear(ps, "tf.input", input_dim, e, rng);
  add_uniform(ps, "tf.cls", 1, e, e, rng);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "tf.layer" + std::to_string(l);
    add_layer_norm(ps, p + ".norm1", e);
    add_linear(ps, p + ".query", e, e, rng);
    add_linear(ps, p + ".key", e, e, rng);
    add_linear(ps, p + ".value", e, e, rng);
    add_linear(ps, p + ".out", e, e, rng);
    add_layer_norm(ps, p + ".norm2", e);
    add_linear(ps, p + ".ffn1", e, c.ffn_hidden, rng);
    add_linear(ps, p + ".ffn2", c.ffn_hidden, e, rng);
  }
  add_layer_norm(ps, "tf.norm_final", e);
  add_linear(ps, "tf.head", e, 2, rng);
}

/// Sorted indices of the patches that enter the encoder: all of them when the
/// bag fits, otherwise max_seq_len drawn without replacement.
inline std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t max_seq_len, std::mt19937_64& rng) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  if (n <= max_seq_len) return all;
  std::vector<std::size_t> chosen;
  chosen.reserve(max_seq_len);
  std::sample(all.begin(), all.end(), std::back_inserter(chosen), max_seq_len, rng);
  return chosen;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

/// Evaluation-time subsample stream: fixed per slide, independent of training.
inline std::mt19937_64 eval_subsample_rng(const TransformerConfig& c, std::string_view slide_id) {
  return std::mt19937_64(c.eval_seed ^ fnv1a(slide_id));
}

template <typename T>
struct TransformerGraph {
  Var<T> logits;
};

/// Pre-norm encoder over [CLS; x W_in]. No positional encoding, so the output
/// depends on the set of patch rows and not on their order. The last layer
/// only needs the CLS query, so it skips the other rows.
template <typename T, typename P>
TransformerGraph<T> transformer_graph(Tape<T>& tape, P& ps, const Var<T>& x, const TransformerConfig& c) {
  TransformerGraph<T> g;
  const std::size_t dh = c.embed_dim / c.n_heads;
  const T inv_sqrt = T(1.0 / std::sqrt(double(dh)));

  Var<T> tokens = linear(tape, ps, "tf.input", x);
  Var<T> z = ad::concat_rows(std::vector<Var<T>>{tape.param(ps, "tf.cls"), tokens});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "tf.layer" + std::to_string(l);
    const bool last = l + 1 == c.n_layers;

    Var<T> y = layer_norm(tape, ps, p + ".norm1", z);
    Var<T> y_query = last ? ad::gather_rows(y, {0}) : y;
    Var<T> z_base = last ? ad::gather_rows(z, {0}) : z;
    Var<T> q = linear(tape, ps, p + ".query", y_query);
    Var<T> k = linear(tape, ps, p + ".key", y);
    Var<T> v = linear(tape, ps, p + ".value", y);
    std::vector<Var<T>> heads;
    for (std::size_t h = 0; h < c.n_heads; ++h) {
      auto qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
      auto kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
      auto vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
      heads.push_back(ad::attention(qh, kh, vh, inv_sqrt));
    }
    z = ad::add(z_base, linear(tape, ps, p + ".out", ad::concat_cols(heads)));

    Var<T> y2 = layer_norm(tape, ps, p + ".norm2", z);
    Var<T> ff = linear(tape, ps, p + ".ffn2", ad::gelu(linear(tape, ps, p + ".ffn1", y2)));
    z = ad::add(z, ff);
  }
  Var<T> cls = z.rows() == 1 ? z : ad::gather_rows(z, {0});
  g.logits = linear(tape, ps, "tf.head", layer_norm(tape, ps, "tf.norm_final", cls));
  return g;
}

}  // namespace wsical::agg
