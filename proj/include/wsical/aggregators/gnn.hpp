#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "wsical/aggregators/config.hpp"
#include "wsical/aggregators/layers.hpp"
#include "wsical/slidedata/graph.hpp"

namespace wsical::agg {

template <typename T>
void init_gat_layer(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t heads,
                    std::mt19937_64& rng) {
  const std::size_t dh = hidden / heads;
  add_uniform(ps, name + ".W", in, hidden, in, rng);
  // Column h holds head h's half of the attention vector.
  add_uniform(ps, name + ".att_src", dh, heads, dh, rng);
  add_uniform(ps, name + ".att_dst", dh, heads, dh, rng);
  ps.add(name + ".b", Tensor<T>::matrix(1, hidden));
}

template <typename T>
void init_gnn(ParamSet<T>& ps, std::size_t input_dim, const GnnConfig& c, std::mt19937_64& rng) {
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    init_gat_layer(ps, "gnn.layer" + std::to_string(l), l == 0 ? input_dim : c.hidden_dim, c.hidden_dim, c.n_heads,
                   rng);
  }
  add_linear(ps, "gnn.head", c.hidden_dim, 2, rng);
}

/// One multi-head graph attention layer. For edge j -> i and head h the score
/// is leaky_relu(a_dst . W_h x_i + a_src . W_h x_j), normalised over the
/// incoming edges of i; node i receives the weighted sum of W_h x_j. Heads
/// are concatenated, biased and passed through ELU. `attention`, if given,
/// receives each head's per-edge weights.
template <typename T, typename P>
Var<T> gat_layer(Tape<T>& tape, P& ps, const std::string& name, const Var<T>& x, const data::MessageEdges& edges,
                 std::size_t n_heads, double slope, std::vector<Var<T>>* attention = nullptr) {
  const std::size_t n = x.rows();
  if (edges.n_nodes != n) {
    throw std::invalid_argument("gat_layer: edge list is for " + std::to_string(edges.n_nodes) + " nodes, features have " +
                                std::to_string(n) + " rows");
  }
  Var<T> w = tape.param(ps, name + ".W");
  if (w.rows() != x.cols()) {
    throw std::invalid_argument("gat_layer: " + name + " expects " + std::to_string(w.rows()) +
                                " input features, got " + std::to_string(x.cols()));
  }
  const std::size_t dh = w.cols() / n_heads;
  Var<T> wx = ad::matmul(x, w);
  Var<T> a_src = tape.param(ps, name + ".att_src");
  Var<T> a_dst = tape.param(ps, name + ".att_dst");

  std::vector<Var<T>> heads;
  for (std::size_t h = 0; h < n_heads; ++h) {
    Var<T> wx_h = ad::slice_cols(wx, h * dh, (h + 1) * dh);
    Var<T> s_src = ad::matmul(wx_h, ad::slice_cols(a_src, h, h + 1));
    Var<T> s_dst = ad::matmul(wx_h, ad::slice_cols(a_dst, h, h + 1));
    Var<T> e = ad::leaky_relu(ad::add(ad::gather_rows(s_dst, edges.dst), ad::gather_rows(s_src, edges.src)), T(slope));
    Var<T> alpha = ad::segment_softmax(e, edges.dst, n);
    if (attention) attention->push_back(alpha);
    Var<T> messages = ad::mul_col(ad::gather_rows(wx_h, edges.src), alpha);
    heads.push_back(ad::scatter_add_rows(messages, edges.dst, n));
  }
  return ad::elu(ad::add_row(ad::concat_cols(heads), tape.param(ps, name + ".b")));
}

template <typename T>
struct GnnGraph {
  Var<T> node_features;  // output of the last layer
  Var<T> logits;
  std::vector<Var<T>> attention;
};

template <typename T, typename P>
GnnGraph<T> gnn_graph(Tape<T>& tape, P& ps, const Var<T>& x, const data::MessageEdges& edges, const GnnConfig& c) {
  GnnGraph<T> g;
  Var<T> h = x;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    h = gat_layer(tape, ps, "gnn.layer" + std::to_string(l), h, edges, c.n_heads, c.leaky_slope, &g.attention);
  }
  g.node_features = h;
  g.logits = linear(tape, ps, "gnn.head", ad::mean_rows(h));
  return g;
}

}  // namespace wsical::agg
