#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsical/common/binary.hpp"
#include "wsical/slidedata/bag.hpp"

// On-disk formats (all little-endian):
//   bag file:   "SBAG" u32 version=1, u32 n_patches, u32 dim, n_patches*dim float32
//   coord file: "SCRD" u32 version=1, u32 n_patches, n_patches * (u32 row, u32 col)
//   manifest:   JSON array of {"slide_id", "label", "bag_file", "coord_file"},
//               file paths relative to the manifest's directory.

namespace wsical::data {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kBagFormatVersion = 1;

struct BagPayload {
  std::size_t n_patches = 0;
  std::size_t dim = 0;
  std::vector<float> features;
};

inline void write_bag_file(const fs::path& path, const FeatureBag& bag) {
  io::ByteWriter w;
  w.magic("SBAG");
  w.u32(kBagFormatVersion);
  w.u32(std::uint32_t(bag.n_patches()));
  w.u32(std::uint32_t(bag.dim));
  for (float v : bag.features) w.f32(v);
  w.save(path);
}

inline BagPayload read_bag_file(const fs::path& path) {
  auto r = io::ByteReader<DataError>::load(path);
  r.expect_magic("SBAG");
  if (auto v = r.u32("version"); v != kBagFormatVersion) r.fail("unsupported version " + std::to_string(v));
  BagPayload out;
  out.n_patches = r.u32("n_patches");
  out.dim = r.u32("dim");
  if (out.n_patches == 0 || out.dim == 0) r.fail("header declares an empty bag");
  const std::size_t row_bytes = out.dim * 4;
  if (r.remaining() != out.n_patches * row_bytes) {
    r.fail("header declares n_patches=" + std::to_string(out.n_patches) + " of dim " + std::to_string(out.dim) +
           " but payload holds " + std::to_string(r.remaining() / row_bytes) + " full rows");
  }
  out.features.resize(out.n_patches * out.dim);
  for (float& v : out.features) v = r.f32("features");
  return out;
}

inline void write_coord_file(const fs::path& path, const std::vector<GridCoord>& coords) {
  io::ByteWriter w;
  w.magic("SCRD");
  w.u32(kBagFormatVersion);
  w.u32(std::uint32_t(coords.size()));
  for (const auto& c : coords) {
    w.u32(c.row);
    w.u32(c.col);
  }
  w.save(path);
}

inline std::vector<GridCoord> read_coord_file(const fs::path& path) {
  auto r = io::ByteReader<DataError>::load(path);
  r.expect_magic("SCRD");
  if (auto v = r.u32("version"); v != kBagFormatVersion) r.fail("unsupported version " + std::to_string(v));
  const std::size_t n = r.u32("n_patches");
  if (r.remaining() != n * 8) {
    r.fail("header declares n_patches=" + std::to_string(n) + " but payload holds " +
           std::to_string(r.remaining() / 8) + " coordinate pairs");
  }
  std::vector<GridCoord> coords(n);
  for (auto& c : coords) {
    c.row = r.u32("row");
    c.col = r.u32("col");
  }
  return coords;
}

/// Writes every bag plus a manifest to `dir`; returns the manifest path.
inline fs::path write_dataset(const fs::path& dir, const std::vector<FeatureBag>& bags,
                              const std::string& manifest_name = "manifest.json") {
  fs::create_directories(dir / "bags");
  fs::create_directories(dir / "coords");
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& bag : bags) {
    const std::string bag_rel = "bags/" + bag.slide_id + ".sbag";
    const std::string coord_rel = "coords/" + bag.slide_id + ".scrd";
    write_bag_file(dir / bag_rel, bag);
    write_coord_file(dir / coord_rel, bag.coords);
    manifest.push_back(
        {{"slide_id", bag.slide_id}, {"label", bag.label}, {"bag_file", bag_rel}, {"coord_file", coord_rel}});
  }
  const fs::path path = dir / manifest_name;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
  out << manifest.dump(2) << '\n';
  return path;
}

inline std::vector<FeatureBag> load_bag_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + path.string() + "': " + e.what());
  }
  if (!manifest.is_array()) throw DataError("manifest '" + path.string() + "': expected a JSON array");

  const fs::path base = path.parent_path();
  std::vector<FeatureBag> bags;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& entry = manifest[i];
    const std::string where = "manifest '" + path.string() + "' entry " + std::to_string(i);
    auto field = [&](const char* key) -> const nlohmann::json& {
      if (!entry.is_object() || !entry.contains(key)) throw DataError(where + ": missing field '" + key + "'");
      return entry.at(key);
    };
    FeatureBag bag;
    if (!field("slide_id").is_string()) throw DataError(where + ": field 'slide_id' must be a string");
    bag.slide_id = field("slide_id").get<std::string>();
    const auto& label = field("label");
    if (!label.is_number_integer() || (label.get<int>() != kMss && label.get<int>() != kMsi)) {
      throw DataError(where + ": field 'label' must be 0 or 1, got " + label.dump());
    }
    bag.label = label.get<int>();
    if (!ids.insert(bag.slide_id).second) throw DataError(where + ": duplicate slide_id '" + bag.slide_id + "'");
    if (!field("bag_file").is_string() || !field("coord_file").is_string()) {
      throw DataError(where + ": fields 'bag_file' and 'coord_file' must be strings");
    }
    const fs::path bag_path = base / field("bag_file").get<std::string>();
    const fs::path coord_path = base / field("coord_file").get<std::string>();
    for (const auto& p : {bag_path, coord_path}) {
      if (!fs::exists(p)) throw DataError(where + ": file not found '" + p.string() + "'");
    }
    BagPayload payload = read_bag_file(bag_path);
    bag.dim = payload.dim;
    bag.features = std::move(payload.features);
    bag.coords = read_coord_file(coord_path);
    if (bag.coords.size() != payload.n_patches) {
      throw DataError(where + ": bag file has " + std::to_string(payload.n_patches) + " patches but coord file has " +
                      std::to_string(bag.coords.size()));
    }
    if (!bags.empty() && bag.dim != bags.front().dim) {
      throw DataError(where + ": feature dim " + std::to_string(bag.dim) + " differs from " +
                      std::to_string(bags.front().dim));
    }
    bag.validate();
    bags.push_back(std::move(bag));
  }
  if (bags.empty()) throw DataError("manifest '" + path.string() + "' lists no slides");
  return bags;
}

}  // namespace wsical::data
