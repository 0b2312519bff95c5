#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "wsical/aggregators/clam.hpp"
#include "wsical/aggregators/config.hpp"
#include "wsical/aggregators/gnn.hpp"
#include "wsical/aggregators/layers.hpp"
#include "wsical/aggregators/transformer.hpp"
#include "wsical/slidedata/bag.hpp"
#include "wsical/slidedata/graph.hpp"

namespace wsical::agg {

struct SlideOutput {
  std::array<double, 2> logits{};
  std::optional<std::vector<double>> attention;                    // per patch, CLAM only
  std::optional<std::vector<std::array<double, 2>>> instance_logits;  // CLAM selected patches
  std::vector<std::size_t> instance_index;
  std::size_t n_instances_used = 0;  // patches that reached the aggregator
};

template <typename T>
struct Model {
  ModelKind kind = ModelKind::kClam;
  std::size_t input_dim = 0;
  ModelConfig config;
  ParamSet<T> params;
};

template <typename T>
Model<T> make_model(ModelKind kind, std::size_t input_dim, const ModelConfig& config, std::uint64_t seed) {
  if (input_dim == 0) throw std::invalid_argument("make_model: input_dim must be positive");
  config.validate();
  Model<T> m{kind, input_dim, config, {}};
  std::mt19937_64 rng(seed);
  switch (kind) {
    case ModelKind::kClam: init_clam(m.params, input_dim, config.clam, rng); break;
    case ModelKind::kTransformer: init_transformer(m.params, input_dim, config.transformer, rng); break;
    case ModelKind::kGnn: init_gnn(m.params, input_dim, config.gnn, rng); break;
  }
  return m;
}

template <typename T>
struct ForwardPass {
  Var<T> logits;
  Var<T> loss;
  SlideOutput output;
};

namespace detail {

inline std::array<double, 2> to_pair(const Tensor<float>& t, std::size_t row = 0) {
  return {double(t(row, 0)), double(t(row, 1))};
}
inline std::array<double, 2> to_pair(const Tensor<double>& t, std::size_t row = 0) { return {t(row, 0), t(row, 1)}; }

}  // namespace detail

/// Records one slide on `tape`. P is ParamSet<T> for training or
/// const ParamSet<T> for inference. `train_rng` drives the Transformer
/// subsample during training; without it the per-slide evaluation stream is
/// used.
template <typename T, typename P>
ForwardPass<T> forward(Tape<T>& tape, ModelKind kind, std::size_t input_dim, const ModelConfig& config, P& params,
                       const data::FeatureBag& bag, std::mt19937_64* train_rng = nullptr) {
  check_bag(bag, input_dim, to_string(kind).c_str());
  if (bag.label != data::kMss && bag.label != data::kMsi) {
    throw std::invalid_argument("forward: bag '" + bag.slide_id + "' has label outside {0, 1}");
  }
  ForwardPass<T> f;
  switch (kind) {
    case ModelKind::kClam: {
      Var<T> x = tape.constant(bag_matrix<T>(bag));
      auto g = clam_graph(tape, params, x, config.clam);
      f.logits = g.logits;
      f.loss = clam_loss(g, bag.label, config.clam);
      f.output.attention = std::vector<double>(g.attention.value().data.begin(), g.attention.value().data.end());
      if (g.instance_logits) {
        std::vector<std::array<double, 2>> inst;
        for (std::size_t r = 0; r < g.instance_index.size(); ++r) {
          inst.push_back(detail::to_pair(g.instance_logits->value(), r));
        }
        f.output.instance_logits = std::move(inst);
        f.output.instance_index = g.instance_index;
      }
      f.output.n_instances_used = bag.n_patches();
      break;
    }
    case ModelKind::kTransformer: {
      std::vector<std::size_t> rows;
      if (train_rng) {
        rows = subsample_indices(bag.n_patches(), config.transformer.max_seq_len, *train_rng);
      } else {
        auto rng = eval_subsample_rng(config.transformer, bag.slide_id);
        rows = subsample_indices(bag.n_patches(), config.transformer.max_seq_len, rng);
      }
      Var<T> x = rows.size() == bag.n_patches() ? tape.constant(bag_matrix<T>(bag))
                                                 : tape.constant(bag_matrix<T>(data::select_patches(bag, rows)));
      auto g = transformer_graph(tape, params, x, config.transformer);
      f.logits = g.logits;
      f.loss = ad::cross_entropy(g.logits, {std::size_t(bag.label)});
      f.output.n_instances_used = rows.size();
      break;
    }
    case ModelKind::kGnn: {
      auto edges = data::to_message_edges(data::build_patch_graph(bag.coords, config.gnn.connectivity, true));
      Var<T> x = tape.constant(bag_matrix<T>(bag));
      auto g = gnn_graph(tape, params, x, edges, config.gnn);
      f.logits = g.logits;
      f.loss = ad::cross_entropy(g.logits, {std::size_t(bag.label)});
      f.output.n_instances_used = bag.n_patches();
      break;
    }
  }
  f.output.logits = detail::to_pair(f.logits.value());
  return f;
}

template <typename T>
SlideOutput predict(const Model<T>& model, const data::FeatureBag& bag) {
  Tape<T> tape;
  return forward(tape, model.kind, model.input_dim, model.config, model.params, bag).output;
}

// Entry points per architecture, all in inference mode.

template <typename T>
SlideOutput clam_forward(const data::FeatureBag& bag, const ParamSet<T>& params, const ClamConfig& config) {
  ModelConfig mc;
  mc.clam = config;
  Tape<T> tape;
  return forward(tape, ModelKind::kClam, params.value("clam.fc.W").rows(), mc, params, bag).output;
}

template <typename T>
SlideOutput transformer_forward(const data::FeatureBag& bag, const ParamSet<T>& params, const TransformerConfig& config,
                                std::mt19937_64& rng) {
  ModelConfig mc;
  mc.transformer = config;
  Tape<T> tape;
  return forward(tape, ModelKind::kTransformer, params.value("tf.input.W").rows(), mc, params, bag, &rng).output;
}

template <typename T>
SlideOutput gnn_forward(const data::FeatureBag& bag, const data::EdgeList& edges, const ParamSet<T>& params,
                        const GnnConfig& config) {
  check_bag(bag, params.value("gnn.layer0.W").rows(), "gnn");
  if (edges.n_nodes != bag.n_patches()) throw std::invalid_argument("gnn_forward: edge list does not match bag");
  data::EdgeList with_loops = edges;
  with_loops.self_loops = true;
  Tape<T> tape;
  Var<T> x = tape.constant(bag_matrix<T>(bag));
  auto g = gnn_graph(tape, params, x, data::to_message_edges(with_loops), config);
  SlideOutput out;
  out.logits = detail::to_pair(g.logits.value());
  out.n_instances_used = bag.n_patches();
  return out;
}

}  // namespace wsical::agg
