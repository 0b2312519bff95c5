// wsical: synthetic WSI feature bags, three MIL aggregators, calibration
// metrics and the k-fold experiment protocol, driven from the command line.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "wsical/aggregators.hpp"
#include "wsical/calibration.hpp"
#include "wsical/harness.hpp"
#include "wsical/slidedata/bagio.hpp"

namespace fs = std::filesystem;
using namespace wsical;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;
  std::optional<std::string> model;
};

harness::ExperimentConfig experiment_config(const std::string& path, const Overrides& o) {
  harness::ExperimentConfig c = path.empty() ? harness::ExperimentConfig{} : harness::load_config(path);
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.workers) c.workers = *o.workers;
  if (o.model) {
    c.models.clear();
    if (*o.model == "all") {
      c.models.assign(std::begin(agg::kAllModels), std::end(agg::kAllModels));
    } else {
      c.models.push_back(agg::parse_model_kind(*o.model));
    }
  }
  return c;
}

// A bare dataset spec or a full experiment config with a synthetic dataset.
data::DatasetSpec dataset_spec(const std::string& path) {
  const auto j = harness::read_json_file(path);
  if (j.contains("dataset")) {
    auto c = harness::parse_config(j);
    if (!c.dataset.synthetic) throw harness::ConfigError("'" + path + "' has no synthetic dataset section");
    return *c.dataset.synthetic;
  }
  try {
    return j.get<data::DatasetSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw harness::ConfigError("'" + path + "': " + e.what());
  }
}

int cmd_generate(const std::string& config, const Overrides& o) {
  data::DatasetSpec spec = config.empty() ? data::DatasetSpec{} : dataset_spec(config);
  if (o.seed) spec.seed = *o.seed;
  const fs::path out = o.out.value_or("dataset");
  harness::ensure_writable(out);
  const auto id = data::write_dataset(out / "id", data::generate_dataset(spec, data::Variant::kInDistribution));
  const auto ood = data::write_dataset(out / "ood", data::generate_dataset(spec, data::Variant::kOutOfDistribution));
  harness::write_text(out / "dataset_spec.json", nlohmann::json(spec).dump(2) + "\n");
  std::printf("wrote %zu ID slides to %s\nwrote %zu OOD slides to %s\n", spec.n_slides, id.string().c_str(),
              spec.n_ood_slides, ood.string().c_str());
  return kOk;
}

int cmd_run(const std::string& config, const Overrides& o) {
  const auto c = experiment_config(config, o);
  const auto r = harness::run_experiment(c);
  std::cout << harness::summary_markdown(r);
  std::printf("\nartifacts in %s\n", c.out_dir.c_str());
  if (r.failed_folds() > 0) {
    spdlog::error("{} fold(s) failed; partial results written", r.failed_folds());
    return kRuntimeError;
  }
  return kOk;
}

int cmd_train(const std::string& config, const Overrides& o, std::size_t fold) {
  auto c = experiment_config(config, o);
  if (c.models.size() != 1) throw harness::ConfigError("train: pick one model with --model");
  c.validate();
  if (fold >= c.k) throw harness::ConfigError("train: fold must be below k = " + std::to_string(c.k));
  const fs::path out = c.out_dir;
  harness::ensure_writable(out);
  const auto data = harness::load_datasets(c.dataset);
  const auto split = harness::make_experiment_splits(data, c);
  const auto run = harness::run_fold(c.models.front(), fold, split, data, c);
  const auto& r = run.result;
  const std::string stem = agg::to_string(r.model) + "_fold" + std::to_string(fold);
  harness::write_text(out / (stem + ".json"), nlohmann::json(r).dump(2) + "\n");
  if (r.failed) {
    spdlog::error("training failed: {}", r.failure);
    return kRuntimeError;
  }
  agg::save_checkpoint(out / (stem + ".sckp"), *run.model,
                       {{"fold", fold}, {"best_epoch", r.best_epoch}, {"temperature", r.temperature}});
  std::printf("%s fold %zu: best epoch %zu, validation %s %.4f, T %.4f\n", agg::to_string(r.model).c_str(), fold,
              r.best_epoch, r.score_name.c_str(), r.best_score, r.temperature);
  std::printf("ID  AUROC %.4f  ECE %.4f -> %.4f\n", r.id.pre.auroc, r.id.pre.ece.begin()->second,
              r.id.post.ece.begin()->second);
  std::printf("OOD AUROC %.4f  ECE %.4f -> %.4f\n", r.ood.pre.auroc, r.ood.pre.ece.begin()->second,
              r.ood.post.ece.begin()->second);
  return kOk;
}

int cmd_report(const std::string& results, const Overrides& o) {
  const fs::path in = results.empty() ? fs::path(o.out.value_or("results")) / "results.json" : fs::path(results);
  const auto r = harness::read_results_json(in);
  const fs::path out = o.out.value_or(in.parent_path().string());
  harness::ensure_writable(out);
  harness::emit_report(r, out);
  std::cout << harness::summary_markdown(r);
  return kOk;
}

// Fits T on the validation set of a predictions file (or takes it from the
// command line) and reports every set before and after scaling.
int cmd_calibrate(const std::string& path, std::optional<double> temperature, std::size_t M,
                  const std::string& mode_name, const Overrides& o) {
  const auto j = harness::read_json_file(path);
  const auto mode = cal::parse_binning_mode(mode_name);
  double T = 1.0;
  if (temperature) {
    cal::check_temperature(*temperature);
    T = *temperature;
  } else {
    if (!j.contains("validation")) throw harness::ConfigError("'" + path + "' has no validation set; pass --temperature");
    T = cal::fit_temperature(j.at("validation").get<cal::PredictionSet>());
  }
  std::printf("T = %.6f\n", T);
  nlohmann::json out = {{"temperature", T}, {"M", M}, {"binning_mode", cal::to_string(mode)}};
  for (const char* set : {"validation", "id_test", "ood", "predictions"}) {
    if (!j.contains(set)) continue;
    const auto p = j.at(set).get<cal::PredictionSet>();
    const auto pre = cal::evaluate(p, M, mode);
    const auto post = cal::evaluate(p, M, mode, T);
    std::printf("%-10s n=%-5zu ECE %.4f -> %.4f  NLL %.4f -> %.4f  AUROC %.4f\n", set, p.size(), pre.ece, post.ece,
                pre.nll, post.nll, pre.auroc);
    out[set] = {{"ece", pre.ece}, {"ece_ts", post.ece}, {"nll", pre.nll}, {"nll_ts", post.nll}, {"auroc", pre.auroc}};
  }
  if (o.out) harness::write_text(*o.out, out.dump(2) + "\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration study of MIL aggregators on whole-slide feature bags"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging (per-epoch progress)");
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors");

  std::string config;
  Overrides o;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t workers = 1;
  std::string model;
  auto add_common = [&](CLI::App* cmd, bool with_model) {
    cmd->add_option("--config", config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Global seed (overrides the config)");
    cmd->add_option("--out", out, "Output directory");
    if (with_model) {
      cmd->add_option("--workers", workers, "Folds trained concurrently")->check(CLI::PositiveNumber);
      cmd->add_option("--model", model, "Model kind")->check(CLI::IsMember({"clam", "transformer", "gnn", "all"}));
    }
  };

  auto* generate = app.add_subcommand("generate", "Write a synthetic ID and OOD dataset from a spec file");
  add_common(generate, false);
  auto* run = app.add_subcommand("run", "Full k-fold experiment with ID/OOD evaluation and reports");
  add_common(run, true);
  auto* train = app.add_subcommand("train", "Train and evaluate one model on one fold");
  add_common(train, true);
  std::size_t fold = 0;
  train->add_option("--fold", fold, "Fold index");
  auto* report = app.add_subcommand("report", "Re-render every report file from results.json");
  std::string results;
  report->add_option("--results", results, "results.json to read (default: <out>/results.json)")
      ->check(CLI::ExistingFile);
  report->add_option("--out", out, "Output directory (default: next to results.json)");
  auto* calibrate = app.add_subcommand("calibrate", "Fit or apply a temperature to stored predictions");
  std::string predictions;
  std::optional<double> temperature;
  std::size_t M = 10;
  std::string mode = "max_confidence";
  calibrate->add_option("--predictions", predictions, "Predictions JSON (from <out>/predictions/)")
      ->required()
      ->check(CLI::ExistingFile);
  calibrate->add_option("--temperature", temperature, "Apply this T instead of fitting on the validation set");
  calibrate->add_option("--bins", M, "Number of ECE bins")->check(CLI::PositiveNumber);
  calibrate->add_option("--mode", mode, "Binning mode")->check(CLI::IsMember({"max_confidence", "positive_class"}));
  calibrate->add_option("--out", out, "Write the calibration summary to this JSON file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);

  CLI::App* cmd = app.get_subcommands().front();
  auto given = [&](const char* name) {
    const CLI::Option* opt = cmd->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  if (given("--seed")) o.seed = seed;
  if (given("--out")) o.out = out;
  if (given("--workers")) o.workers = workers;
  if (given("--model")) o.model = model;

  try {
    if (cmd == generate) return cmd_generate(config, o);
    if (cmd == run) return cmd_run(config, o);
    if (cmd == train) return cmd_train(config, o, fold);
    if (cmd == report) return cmd_report(results, o);
    return cmd_calibrate(predictions, temperature, M, mode, o);
  } catch (const harness::ConfigError& e) {
    spdlog::error("{}", e.what());
    return kConfigError;
  } catch (const data::DataError& e) {
    spdlog::error("data: {}", e.what());
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("json: {}", e.what());
    return kConfigError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kRuntimeError;
  }
}
