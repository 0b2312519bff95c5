#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wsical/aggregators/config.hpp"
#include "wsical/calibration/ece.hpp"
#include "wsical/slidedata/synthetic.hpp"

namespace wsical::data {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetSpec, n_slides, msi_prevalence, patches_min, patches_max,
                                                feature_dim, signal_fraction, signal_shift, ood_shift, n_ood_slides,
                                                seed)

}  // namespace wsical::data

namespace wsical::harness {

namespace fs = std::filesystem;

/// Bad or inconsistent experiment configuration (exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Either a synthetic generator spec or a pair of manifests on disk.
struct DatasetSource {
  std::optional<data::DatasetSpec> synthetic;
  std::string id_manifest;
  std::string ood_manifest;

  bool operator==(const DatasetSource&) const = default;
};

struct CalibrationConfig {
  std::size_t M = 10;
  std::vector<cal::BinningMode> modes{cal::BinningMode::kMaxConfidence, cal::BinningMode::kPositiveClass};

  bool operator==(const CalibrationConfig&) const = default;
};

struct ExperimentConfig {
  DatasetSource dataset;
  std::vector<agg::ModelKind> models{agg::kAllModels[0], agg::kAllModels[1], agg::kAllModels[2]};
  std::size_t k = 5;
  double test_fraction = 0.2;
  agg::TrainConfig train;
  agg::ModelConfig model;
  CalibrationConfig calibration;
  std::string out_dir = "results";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool save_checkpoints = true;

  void validate() const {
    if (models.empty()) throw ConfigError("config: at least one model kind is required");
    for (std::size_t i = 0; i < models.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (models[i] == models[j]) throw ConfigError("config: model '" + agg::to_string(models[i]) + "' listed twice");
      }
    }
    if (k < 2) throw ConfigError("config: k must be at least 2");
    if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("config: test_fraction must lie in (0, 1)");
    if (calibration.M < 1) throw ConfigError("config: calibration.M must be at least 1");
    if (calibration.modes.empty()) throw ConfigError("config: calibration.modes is empty");
    if (workers < 1) throw ConfigError("config: workers must be at least 1");
    if (out_dir.empty()) throw ConfigError("config: out_dir is empty");
    const bool synthetic = dataset.synthetic.has_value();
    const bool manifests = !dataset.id_manifest.empty() || !dataset.ood_manifest.empty();
    if (synthetic == manifests) {
      throw ConfigError("config: dataset needs exactly one of 'synthetic' or 'id_manifest' + 'ood_manifest'");
    }
    if (manifests && (dataset.id_manifest.empty() || dataset.ood_manifest.empty())) {
      throw ConfigError("config: both id_manifest and ood_manifest are required");
    }
    try {
      if (synthetic) dataset.synthetic->validate();
      train.validate();
      model.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
};

inline void to_json(nlohmann::json& j, const DatasetSource& d) {
  j = nlohmann::json::object();
  if (d.synthetic) j["synthetic"] = *d.synthetic;
  if (!d.id_manifest.empty()) j["id_manifest"] = d.id_manifest;
  if (!d.ood_manifest.empty()) j["ood_manifest"] = d.ood_manifest;
}

inline void from_json(const nlohmann::json& j, DatasetSource& d) {
  d = DatasetSource{};
  if (j.contains("synthetic")) d.synthetic = j.at("synthetic").get<data::DatasetSpec>();
  d.id_manifest = j.value("id_manifest", "");
  d.ood_manifest = j.value("ood_manifest", "");
}

inline void to_json(nlohmann::json& j, const CalibrationConfig& c) {
  std::vector<std::string> modes;
  for (auto m : c.modes) modes.push_back(cal::to_string(m));
  j = {{"M", c.M}, {"modes", modes}};
}

inline void from_json(const nlohmann::json& j, CalibrationConfig& c) {
  c = CalibrationConfig{};
  c.M = j.value("M", c.M);
  if (j.contains("modes")) {
    c.modes.clear();
    for (const auto& m : j.at("modes")) c.modes.push_back(cal::parse_binning_mode(m.get<std::string>()));
  }
}

/// The echo written into results.json. Output location and worker count are
/// left out because they cannot change any number.
inline nlohmann::json echo(const ExperimentConfig& c) {
  std::vector<std::string> models;
  for (auto m : c.models) models.push_back(agg::to_string(m));
  return {{"dataset", c.dataset}, {"models", models},         {"k", c.k},
          {"test_fraction", c.test_fraction}, {"train", c.train}, {"model", c.model},
          {"calibration", c.calibration},     {"seed", c.seed}};
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = echo(c);
  j["out_dir"] = c.out_dir;
  j["workers"] = c.workers;
  j["save_checkpoints"] = c.save_checkpoints;
}

/// Missing keys keep their defaults. `models` also accepts the string "all".
inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("dataset")) c.dataset = j.at("dataset").get<DatasetSource>();
  if (j.contains("models")) {
    const auto& m = j.at("models");
    c.models.clear();
    if (m.is_string() && m.get<std::string>() == "all") {
      c.models.assign(std::begin(agg::kAllModels), std::end(agg::kAllModels));
    } else {
      for (const auto& name : m) c.models.push_back(agg::parse_model_kind(name.get<std::string>()));
    }
  }
  c.k = j.value("k", c.k);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  if (j.contains("train")) c.train = j.at("train").get<agg::TrainConfig>();
  if (j.contains("model")) c.model = j.at("model").get<agg::ModelConfig>();
  if (j.contains("calibration")) c.calibration = j.at("calibration").get<CalibrationConfig>();
  c.out_dir = j.value("out_dir", c.out_dir);
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  c.save_checkpoints = j.value("save_checkpoints", c.save_checkpoints);
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  try {
    return j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path.string() + "': " + e.what());
  }
}

/// Manifest paths in a config file are resolved against the file's directory.
inline ExperimentConfig load_config(const fs::path& path) {
  ExperimentConfig c = parse_config(read_json_file(path));
  const fs::path base = path.parent_path();
  for (std::string* p : {&c.dataset.id_manifest, &c.dataset.ood_manifest}) {
    if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return c;
}

/// Creates the directory and proves a file can be written there.
inline void ensure_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("output directory '" + dir.string() + "' cannot be created: " + ec.message());
  const fs::path probe = dir / ".wsical_write_probe";
  {
    std::ofstream out(probe);
    if (!out || !(out << "ok")) throw ConfigError("output directory '" + dir.string() + "' is not writable");
  }
  fs::remove(probe, ec);
}

}  // namespace wsical::harness
