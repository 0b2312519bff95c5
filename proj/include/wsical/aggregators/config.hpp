#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace wsical::agg {

enum class ModelKind { kClam, kTransformer, kGnn };

inline constexpr ModelKind kAllModels[] = {ModelKind::kClam, ModelKind::kTransformer, ModelKind::kGnn};

inline std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kClam: return "clam";
    case ModelKind::kTransformer: return "transformer";
    case ModelKind::kGnn: return "gnn";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view text) {
  for (ModelKind k : kAllModels) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown model kind '" + std::string(text) + "' (expected clam, transformer or gnn)");
}

struct ClamConfig {
  double c1 = 0.7;
  double c2 = 0.3;
  std::size_t embed_dim = 256;
  std::size_t attention_hidden = 256;
  std::size_t instance_top_k = 8;

  void validate() const {
    if (!(c1 >= 0) || !(c2 >= 0)) throw std::invalid_argument("clam: loss weights must be nonnegative");
    if (instance_top_k < 1) throw std::invalid_argument("clam: instance_top_k must be at least 1");
    if (embed_dim < 1 || attention_hidden < 1) throw std::invalid_argument("clam: widths must be positive");
  }
};

struct TransformerConfig {
  std::size_t embed_dim = 256;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t ffn_hidden = 512;
  std::size_t max_seq_len = 5000;
  std::uint64_t eval_seed = 0x5eed;  // fixed subsample seed at evaluation

  void validate() const {
    if (n_heads < 1 || embed_dim % n_heads != 0) {
      throw std::invalid_argument("transformer: embed_dim must be divisible by n_heads");
    }
    if (n_layers < 1 || ffn_hidden < 1) throw std::invalid_argument("transformer: need at least one layer");
    if (max_seq_len < 1) throw std::invalid_argument("transformer: max_seq_len must be at least 1");
  }
};

struct GnnConfig {
  std::size_t n_layers = 3;
  std::size_t hidden_dim = 256;
  std::size_t n_heads = 4;
  std::string pooling = "mean";
  int connectivity = 8;
  double leaky_slope = 0.2;

  void validate() const {
    if (n_layers < 1) throw std::invalid_argument("gnn: n_layers must be at least 1");
    if (n_heads < 1 || hidden_dim % n_heads != 0) {
      throw std::invalid_argument("gnn: hidden_dim must be divisible by n_heads");
    }
    if (pooling != "mean") throw std::invalid_argument("gnn: only mean pooling is supported");
    if (connectivity != 4 && connectivity != 8) throw std::invalid_argument("gnn: connectivity must be 4 or 8");
  }
};

struct ModelConfig {
  ClamConfig clam;
  TransformerConfig transformer;
  GnnConfig gnn;

  void validate() const {
    clam.validate();
    transformer.validate();
    gnn.validate();
  }
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::string selection_metric = "balanced_accuracy";
  double learning_rate = 1e-4;
  double grad_clip = 5.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  bool resample_per_epoch = true;

  void validate() const {
    if (selection_metric != "balanced_accuracy") {
      throw std::invalid_argument("train: selection_metric must be balanced_accuracy");
    }
    if (!(learning_rate > 0)) throw std::invalid_argument("train: learning_rate must be positive");
    if (!(grad_clip >= 0)) throw std::invalid_argument("train: grad_clip must be nonnegative");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ClamConfig, c1, c2, embed_dim, attention_hidden, instance_top_k)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TransformerConfig, embed_dim, n_layers, n_heads, ffn_hidden,
                                                max_seq_len, eval_seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GnnConfig, n_layers, hidden_dim, n_heads, pooling, connectivity,
                                                leaky_slope)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, clam, transformer, gnn)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, epochs, selection_metric, learning_rate, grad_clip,
                                                seed, resample_per_epoch)

}  // namespace wsical::agg
