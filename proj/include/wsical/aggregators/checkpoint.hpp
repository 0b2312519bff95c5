#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "wsical/aggregators/model.hpp"
#include "wsical/common/binary.hpp"

// Checkpoint layout (little-endian):
//   "SCKP" | u32 version | u32 n_entries
//   per entry: u32 name_len | name | u32 ndim | u32 dims[ndim] | f32 values[prod(dims)]
// plus "<file>.json" holding the model kind, input width, configs and any
// caller-supplied metadata such as the training history.

namespace wsical::agg {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".json");
}

inline void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  io::ByteWriter w;
  w.magic("SCKP");
  w.u32(kCheckpointVersion);
  w.u32(std::uint32_t(model.params.size()));
  for (const auto& e : model.params) {
    w.text(e.name);
    w.u32(std::uint32_t(e.value.shape.size()));
    for (auto d : e.value.shape) w.u32(std::uint32_t(d));
    for (float v : e.value.data) w.f32(v);
  }
  w.save(path);

  nlohmann::json side = {{"format", "SCKP"},
                         {"version", kCheckpointVersion},
                         {"model", to_string(model.kind)},
                         {"input_dim", model.input_dim},
                         {"config", model.config},
                         {"metadata", metadata}};
  std::ofstream out(sidecar_path(path), std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + sidecar_path(path).string());
  out << side.dump(2) << '\n';
}

/// Rebuilds the architecture from the sidecar, then fills every tensor from
/// the binary file; names, order and shapes must match exactly.
inline Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream side_in(sidecar_path(path));
  if (!side_in) throw CheckpointError("missing checkpoint sidecar " + sidecar_path(path).string());
  nlohmann::json side;
  try {
    side_in >> side;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(sidecar_path(path).string() + ": " + e.what());
  }

  Model<float> model;
  try {
    model = make_model<float>(parse_model_kind(side.at("model").get<std::string>()),
                              side.at("input_dim").get<std::size_t>(), side.at("config").get<ModelConfig>(), 0);
  } catch (const std::exception& e) {
    throw CheckpointError(sidecar_path(path).string() + ": " + e.what());
  }

  auto r = io::ByteReader<CheckpointError>::load(path);
  r.expect_magic("SCKP");
  if (const auto v = r.u32("version"); v != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(v));
  }
  const std::uint32_t n = r.u32("n_entries");
  if (n != model.params.size()) {
    r.fail("holds " + std::to_string(n) + " tensors, the " + to_string(model.kind) + " model has " +
           std::to_string(model.params.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& target = model.params.entry(i);
    const std::string name = r.text("name");
    if (name != target.name) r.fail("entry " + std::to_string(i) + " is '" + name + "', expected '" + target.name + "'");
    const std::uint32_t ndim = r.u32("ndim");
    ad::Shape shape(ndim);
    for (auto& d : shape) d = r.u32("dim");
    if (shape != target.value.shape) {
      r.fail("'" + name + "' has shape " + ad::to_string(shape) + ", expected " + ad::to_string(target.value.shape));
    }
    r.need(4 * target.value.size(), "payload");
    for (float& v : target.value.data) v = r.f32("payload");
  }
  r.expect_end();
  return model;
}

}  // namespace wsical::agg
