#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <gtest/gtest.h>
#include <sys/wait.h>

#include "temp_dir.hpp"
#include "wsical/harness.hpp"
#include "wsical/slidedata/bagio.hpp"

namespace {

namespace fs = std::filesystem;
using namespace wsical;
using namespace wsical::harness;

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c;
  data::DatasetSpec spec;
  spec.n_slides = 20;
  spec.n_ood_slides = 10;
  spec.patches_min = 10;
  spec.patches_max = 30;
  spec.feature_dim = 8;
  spec.seed = 11;
  c.dataset.synthetic = spec;
  c.train.epochs = 2;
  c.train.learning_rate = 1e-3;
  c.model.clam.embed_dim = 16;
  c.model.clam.attention_hidden = 8;
  c.model.clam.instance_top_k = 3;
  c.model.transformer.embed_dim = 16;
  c.model.transformer.n_layers = 1;
  c.model.transformer.n_heads = 2;
  c.model.transformer.ffn_hidden = 32;
  c.model.gnn.n_layers = 1;
  c.model.gnn.hidden_dim = 16;
  c.model.gnn.n_heads = 2;
  c.seed = 3;
  c.out_dir = out.string();
  return c;
}

// Plain two-pass sample statistics.
std::pair<double, double> mean_std_oracle(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += x;
  const long double mean = s / v.size();
  if (v.size() < 2) return {double(mean), 0.0};
  long double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {double(mean), double(std::sqrt(ss / (v.size() - 1)))};
}

// ECE straight from logits: softmax, confidence, membership by bin edges.
double ece_from_logits_oracle(const cal::PredictionSet& p, std::size_t M, bool positive_class) {
  std::vector<double> sum_conf(M), sum_hit(M);
  std::vector<std::size_t> count(M);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double p1 = 1.0 / (1.0 + std::exp(p.logits[i][0] - p.logits[i][1]));
    const int pred = p.logits[i][1] > p.logits[i][0] ? 1 : 0;
    const double conf = positive_class ? p1 : (pred == 1 ? p1 : 1.0 - p1);
    const double hit = positive_class ? p.labels[i] : double(pred == p.labels[i]);
    std::size_t m = 0;
    while (m + 1 < M && conf >= double(m + 1) / double(M)) ++m;
    sum_conf[m] += conf;
    sum_hit[m] += hit;
    ++count[m];
  }
  double ece = 0;
  for (std::size_t m = 0; m < M; ++m) {
    if (count[m] == 0) continue;
    ece += double(count[m]) / double(p.size()) * std::abs(sum_conf[m] / count[m] - sum_hit[m] / count[m]);
  }
  return ece;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

TEST(AggregateFolds, ConstantValues) {
  const std::vector<double> v{1, 1, 1, 1, 1};
  const Stat s = aggregate_folds(v);
  EXPECT_EQ(s.mean, 1.0);
  EXPECT_EQ(s.std, 0.0);
  EXPECT_EQ(s.n, 5u);
  EXPECT_EQ(format_stat(s), "1.000 ± 0.000");
}

TEST(AggregateFolds, TwoValues) {
  const std::vector<double> v{0, 1};
  const Stat s = aggregate_folds(v);
  EXPECT_DOUBLE_EQ(s.mean, 0.5);
  EXPECT_NEAR(s.std, 0.7071, 5e-5);
  EXPECT_NEAR(s.std, std::sqrt(0.5), 1e-15);
  EXPECT_EQ(format_stat(s, 4), "0.5000 ± 0.7071");
}

TEST(AggregateFolds, SingleValueHasZeroStd) {
  const std::vector<double> v{0.42};
  EXPECT_EQ(aggregate_folds(v).std, 0.0);
  EXPECT_EQ(aggregate_folds(v).mean, 0.42);
}

TEST(AggregateFolds, EmptyRejected) {
  EXPECT_THROW(aggregate_folds(std::vector<double>{}), std::invalid_argument);
}

TEST(AggregateFolds, MatchesOracleAndStaysWithinRange) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + trial % 7);
    const double base = u(rng);
    for (double& x : v) x = trial % 3 == 0 ? base : u(rng);
    const Stat s = aggregate_folds(v);
    const auto [mean, sd] = mean_std_oracle(v);
    EXPECT_NEAR(s.mean, mean, 1e-14);
    EXPECT_NEAR(s.std, sd, 1e-14);
    EXPECT_GE(s.std, 0.0);
    EXPECT_GE(s.mean, *std::min_element(v.begin(), v.end()));
    EXPECT_LE(s.mean, *std::max_element(v.begin(), v.end()));
  }
}

TEST(Config, DefaultsAndJsonRoundTrip) {
  ExperimentConfig c = tiny_config("somewhere");
  c.models = {agg::ModelKind::kGnn};
  c.calibration.modes = {cal::BinningMode::kPositiveClass};
  const nlohmann::json j = c;
  const ExperimentConfig back = parse_config(j);
  EXPECT_EQ(nlohmann::json(back), j);

  const ExperimentConfig d = parse_config(nlohmann::json::object());
  EXPECT_EQ(d.k, 5u);
  EXPECT_EQ(d.test_fraction, 0.2);
  EXPECT_EQ(d.models.size(), 3u);
  EXPECT_EQ(d.train.epochs, 200u);
  EXPECT_EQ(d.calibration.M, 10u);
}

TEST(Config, ModelsAcceptsAll) {
  const auto c = parse_config({{"models", "all"}});
  EXPECT_EQ(c.models.size(), 3u);
  EXPECT_EQ(parse_config({{"models", {"transformer"}}}).models.front(), agg::ModelKind::kTransformer);
  EXPECT_THROW(parse_config({{"models", {"rnn"}}}), ConfigError);
}

TEST(Config, ValidationFailures) {
  TempDir dir;
  auto expect_invalid = [&](auto edit) {
    ExperimentConfig c = tiny_config(dir.path());
    edit(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  expect_invalid([](ExperimentConfig& c) { c.models.clear(); });
  expect_invalid([](ExperimentConfig& c) { c.models = {agg::ModelKind::kClam, agg::ModelKind::kClam}; });
  expect_invalid([](ExperimentConfig& c) { c.k = 1; });
  expect_invalid([](ExperimentConfig& c) { c.test_fraction = 1.0; });
  expect_invalid([](ExperimentConfig& c) { c.calibration.M = 0; });
  expect_invalid([](ExperimentConfig& c) { c.dataset.id_manifest = "a.json"; });
  expect_invalid([](ExperimentConfig& c) {
    c.dataset.synthetic.reset();
    c.dataset.id_manifest = "a.json";
  });
  expect_invalid([](ExperimentConfig& c) { c.model.transformer.n_heads = 3; });
  expect_invalid([](ExperimentConfig& c) { c.dataset.synthetic->patches_min = 0; });
  EXPECT_NO_THROW(tiny_config(dir.path()).validate());
}

TEST(Config, ManifestPathsResolveAgainstConfigFile) {
  TempDir dir;
  fs::create_directories(dir.path() / "cfg");
  write_text(dir.path() / "cfg" / "exp.json", R"({"dataset": {"id_manifest": "../data/id.json",
                                                  "ood_manifest": "/abs/ood.json"}})");
  const auto c = load_config(dir.path() / "cfg" / "exp.json");
  EXPECT_EQ(fs::path(c.dataset.id_manifest), (dir.path() / "data" / "id.json").lexically_normal());
  EXPECT_EQ(c.dataset.ood_manifest, "/abs/ood.json");
}

TEST(Config, UnwritableOutputRejected) {
  TempDir dir;
  write_text(dir.path() / "file", "x");
  EXPECT_THROW(ensure_writable(dir.path() / "file" / "out"), ConfigError);
  EXPECT_NO_THROW(ensure_writable(dir.path() / "fresh" / "out"));
  EXPECT_TRUE(fs::is_directory(dir.path() / "fresh" / "out"));
  EXPECT_TRUE(fs::is_empty(dir.path() / "fresh" / "out"));
}

TEST(Experiment, UnwritableOutputCheckedBeforeData) {
  TempDir dir;
  write_text(dir.path() / "file", "x");
  ExperimentConfig c = tiny_config(dir.path() / "file" / "out");
  c.dataset.synthetic.reset();
  c.dataset.id_manifest = (dir.path() / "missing_id.json").string();
  c.dataset.ood_manifest = (dir.path() / "missing_ood.json").string();
  EXPECT_THROW(run_experiment(c), ConfigError);
}

TEST(Experiment, DataErrorsAbortBeforeTraining) {
  TempDir dir;
  ExperimentConfig c = tiny_config(dir.path() / "out");
  c.dataset.synthetic.reset();
  c.dataset.id_manifest = (dir.path() / "missing_id.json").string();
  c.dataset.ood_manifest = (dir.path() / "missing_ood.json").string();
  EXPECT_THROW(run_experiment(c), data::DataError);
  EXPECT_FALSE(fs::exists(dir.path() / "out" / "results.json"));
  EXPECT_FALSE(fs::exists(dir.path() / "out" / "checkpoints"));
}

TEST(Experiment, ManifestDatasetMatchesSyntheticSource) {
  TempDir dir;
  ExperimentConfig synthetic = tiny_config(dir.path() / "a");
  synthetic.models = {agg::ModelKind::kClam};
  synthetic.train.epochs = 1;
  const auto& spec = *synthetic.dataset.synthetic;
  ExperimentConfig manifests = synthetic;
  manifests.out_dir = (dir.path() / "b").string();
  manifests.dataset.synthetic.reset();
  manifests.dataset.id_manifest =
      data::write_dataset(dir.path() / "data" / "id", data::generate_dataset(spec)).string();
  manifests.dataset.ood_manifest =
      data::write_dataset(dir.path() / "data" / "ood", data::generate_dataset(spec, data::Variant::kOutOfDistribution))
          .string();
  const auto a = run_experiment(synthetic);
  const auto b = run_experiment(manifests);
  EXPECT_EQ(a.folds, b.folds);
}

// One full tiny experiment shared by the protocol tests below.
class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<TempDir>();
    config_ = tiny_config(dir_->path() / "run1");
    result_ = std::make_unique<ExperimentResult>(run_experiment(config_));
  }
  static void TearDownTestSuite() {
    result_.reset();
    dir_.reset();
  }
  static fs::path out() { return config_.out_dir; }

  static std::unique_ptr<TempDir> dir_;
  static ExperimentConfig config_;
  static std::unique_ptr<ExperimentResult> result_;
};

std::unique_ptr<TempDir> TinyRun::dir_;
ExperimentConfig TinyRun::config_;
std::unique_ptr<ExperimentResult> TinyRun::result_;

TEST_F(TinyRun, ResultsFileHoldsFiveFoldsPerModel) {
  const auto j = harness::read_json_file(out() / "results.json");
  ASSERT_EQ(j.at("folds").size(), 15u);
  std::map<std::string, std::vector<std::size_t>> folds;
  for (const auto& f : j.at("folds")) folds[f.at("model").get<std::string>()].push_back(f.at("fold"));
  for (const char* m : {"clam", "transformer", "gnn"}) {
    EXPECT_EQ(folds[m], (std::vector<std::size_t>{0, 1, 2, 3, 4})) << m;
  }
  EXPECT_EQ(result_->failed_folds(), 0u);
}

TEST_F(TinyRun, SingleModelConfigGivesExactlyFiveEntries) {
  TempDir dir;
  ExperimentConfig c = tiny_config(dir.path());
  c.models = {agg::ModelKind::kClam};
  run_experiment(c);
  const auto j = harness::read_json_file(dir.path() / "results.json");
  EXPECT_EQ(j.at("folds").size(), 5u);
}

TEST_F(TinyRun, RerunIsByteIdenticalRegardlessOfWorkers) {
  ExperimentConfig again = config_;
  again.out_dir = (dir_->path() / "run2").string();
  again.workers = 3;
  run_experiment(again);
  for (const char* file : {"results.json", "summary.csv", "summary.md", "table_ece_max_confidence.csv",
                           "table_auroc.csv", "metrics.svg", "reliability/gnn_ood_positive_class_ts.csv",
                           "predictions/transformer_fold3.json", "checkpoints/clam_fold1.sckp",
                           "checkpoints/clam_fold1.sckp.json"}) {
    EXPECT_EQ(read_file(out() / file), read_file(again.out_dir / fs::path(file))) << file;
  }
}

TEST_F(TinyRun, DifferentSeedChangesResults) {
  ExperimentConfig other = config_;
  other.out_dir = (dir_->path() / "seed").string();
  other.models = {agg::ModelKind::kClam};
  other.seed = config_.seed + 100;
  const auto r = run_experiment(other);
  EXPECT_NE(r.folds.front().id.predictions, result_->folds.front().id.predictions);
}

TEST_F(TinyRun, ResultsJsonRoundTrips) {
  const ExperimentResult back = read_results_json(out() / "results.json");
  EXPECT_EQ(back, *result_);
  EXPECT_EQ(nlohmann::json(back).dump(2) + "\n", read_file(out() / "results.json"));
}

TEST_F(TinyRun, SummaryCsvHasOneRowPerModelDatasetMetric) {
  const auto lines = lines_of(read_file(out() / "summary.csv"));
  const std::size_t n_metrics = metric_names(config_.calibration.modes).size();
  EXPECT_EQ(n_metrics, 8u);
  ASSERT_EQ(lines.size(), 1 + 3 * 2 * n_metrics);
  EXPECT_EQ(lines.front(), "model,dataset,metric,mean,std,n,formatted");
  for (std::size_t i = 1; i < lines.size(); ++i) EXPECT_EQ(split_csv(lines[i]).size(), 7u) << lines[i];
}

TEST_F(TinyRun, EceTableHasTheFourColumns) {
  for (const char* mode : {"max_confidence", "positive_class"}) {
    const auto lines = lines_of(read_file(out() / ("table_ece_" + std::string(mode) + ".csv")));
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0], "model,ID ECE,ID ECE (TS),OOD ECE,OOD ECE (TS)");
    EXPECT_EQ(split_csv(lines[1])[0], "clam");
    EXPECT_NE(lines[2].find(" ± "), std::string::npos);
  }
  const std::string md = read_file(out() / "summary.md");
  EXPECT_NE(md.find("| Model | ID ECE | ID ECE (TS) | OOD ECE | OOD ECE (TS) |"), std::string::npos);
}

TEST_F(TinyRun, StoredEceMatchesRecomputationFromPredictions) {
  for (const auto& f : result_->folds) {
    for (const EvalResult* r : {&f.id, &f.ood}) {
      for (auto mode : config_.calibration.modes) {
        const std::string key = cal::to_string(mode);
        const bool positive = mode == cal::BinningMode::kPositiveClass;
        std::vector<double> conf;
        std::vector<int> outcome;
        cal::confidences_for(r->predictions, mode, 1.0, conf, outcome);
        EXPECT_EQ(r->pre.ece.at(key), cal::compute_ece(conf, outcome, config_.calibration.M));
        EXPECT_NEAR(r->pre.ece.at(key), ece_from_logits_oracle(r->predictions, config_.calibration.M, positive),
                    1e-12);

        cal::PredictionSet scaled = r->predictions;
        for (auto& z : scaled.logits) z = {z[0] / f.temperature, z[1] / f.temperature};
        EXPECT_NEAR(r->post.ece.at(key), ece_from_logits_oracle(scaled, config_.calibration.M, positive), 1e-12);
      }
    }
  }
}

TEST_F(TinyRun, TemperatureComesFromValidationOnly) {
  for (const auto& f : result_->folds) {
    EXPECT_EQ(f.temperature, cal::fit_temperature(f.validation));
    EXPECT_LE(cal::nll(f.validation, f.temperature), cal::nll(f.validation, 1.0));
    const auto& fold_ids = [&] {
      const auto split = make_experiment_splits(load_datasets(config_.dataset), config_);
      return split.folds.at(f.fold).val_ids;
    }();
    EXPECT_EQ(f.validation.slide_ids, fold_ids);
  }
}

TEST_F(TinyRun, TestSetIsSharedAcrossFoldsAndModels) {
  for (const auto& f : result_->folds) {
    EXPECT_EQ(f.id.predictions.slide_ids, result_->folds.front().id.predictions.slide_ids);
    EXPECT_EQ(f.id.predictions.size(), result_->n_test);
    EXPECT_EQ(f.ood.predictions.size(), result_->n_ood);
  }
  EXPECT_EQ(result_->n_test, 4u);
}

TEST_F(TinyRun, MetricsWithinRangesAndRankMetricsUnchangedByScaling) {
  for (const auto& f : result_->folds) {
    EXPECT_LT(f.fold, config_.k);
    EXPECT_GT(f.temperature, 0.0);
    EXPECT_LE(f.best_epoch, config_.train.epochs);
    for (const EvalResult* r : {&f.id, &f.ood}) {
      for (const MetricBlock* b : {&r->pre, &r->post}) {
        EXPECT_GE(b->auroc, 0.0);
        EXPECT_LE(b->auroc, 1.0);
        EXPECT_GE(b->balanced_accuracy, 0.0);
        EXPECT_LE(b->balanced_accuracy, 1.0);
        EXPECT_GE(b->nll, 0.0);
        for (auto& [mode, e] : b->ece) {
          EXPECT_GE(e, 0.0);
          EXPECT_LE(e, 1.0);
        }
      }
      EXPECT_EQ(r->pre.auroc, r->post.auroc);
      EXPECT_EQ(r->pre.balanced_accuracy, r->post.balanced_accuracy);
    }
  }
}

TEST_F(TinyRun, AggregatesComeFromFoldValues) {
  for (auto kind : config_.models) {
    const std::string model = agg::to_string(kind);
    std::vector<double> id_auroc, ood_ece_ts;
    for (const auto& f : result_->folds) {
      if (f.model != kind) continue;
      id_auroc.push_back(f.id.pre.auroc);
      ood_ece_ts.push_back(f.ood.post.ece.at("max_confidence"));
    }
    const auto a = mean_std_oracle(id_auroc);
    const Stat& s = result_->aggregate.at(model).at("id").at("auroc");
    EXPECT_EQ(s.n, 5u);
    EXPECT_NEAR(s.mean, a.first, 1e-14);
    EXPECT_NEAR(s.std, a.second, 1e-14);
    const Stat& t = result_->aggregate.at(model).at("ood").at("ece_max_confidence_ts");
    EXPECT_GE(t.mean, *std::min_element(ood_ece_ts.begin(), ood_ece_ts.end()));
    EXPECT_LE(t.mean, *std::max_element(ood_ece_ts.begin(), ood_ece_ts.end()));
  }
}

TEST_F(TinyRun, ReliabilityCsvProportionsSumToOne) {
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(out() / "reliability")) {
    if (entry.path().extension() != ".csv") continue;
    ++files;
    const auto lines = lines_of(read_file(entry.path()));
    ASSERT_EQ(lines.size(), 1 + config_.calibration.M) << entry.path();
    double total = 0;
    std::size_t count = 0;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto cells = split_csv(lines[i]);
      ASSERT_EQ(cells.size(), 7u);
      total += std::stod(cells[6]);
      count += std::stoul(cells[3]);
    }
    EXPECT_NEAR(total, 1.0, 1e-5) << entry.path();
    const bool id = entry.path().filename().string().find("_id_") != std::string::npos;
    EXPECT_EQ(count, 5 * (id ? result_->n_test : result_->n_ood)) << entry.path();
  }
  // 3 models x 2 datasets x 2 modes x (raw, scaled)
  EXPECT_EQ(files, 24u);
}

TEST_F(TinyRun, ArtifactsPresent) {
  for (const char* m : {"clam", "transformer", "gnn"}) {
    for (int k = 0; k < 5; ++k) {
      const std::string stem = std::string(m) + "_fold" + std::to_string(k);
      EXPECT_TRUE(fs::exists(out() / "predictions" / (stem + ".json"))) << stem;
      EXPECT_TRUE(fs::exists(out() / "checkpoints" / (stem + ".sckp"))) << stem;
      EXPECT_TRUE(fs::exists(out() / "checkpoints" / (stem + ".sckp.json"))) << stem;
    }
  }
}

TEST_F(TinyRun, CheckpointReproducesStoredPredictions) {
  const auto model = agg::load_checkpoint(out() / "checkpoints" / "gnn_fold2.sckp");
  const auto data = load_datasets(config_.dataset);
  const auto split = make_experiment_splits(data, config_);
  const auto test = copy_bags(data.id, split.test_ids);
  const auto p = predict_all(model, test);
  for (const auto& f : result_->folds) {
    if (f.model == agg::ModelKind::kGnn && f.fold == 2) EXPECT_EQ(p, f.id.predictions);
  }
}

TEST_F(TinyRun, ReportRerenderIsIdentical) {
  const fs::path again = dir_->path() / "rerender";
  emit_report(read_results_json(out() / "results.json"), again);
  for (const char* file : {"results.json", "summary.csv", "summary.md", "metrics.svg",
                           "reliability/clam_id_max_confidence.svg", "predictions/clam_fold0.json"}) {
    EXPECT_EQ(read_file(out() / file), read_file(again / file)) << file;
  }
}

TEST(Report, FailedFoldsAreExcludedFromAggregates) {
  TempDir dir;
  ExperimentConfig c = tiny_config(dir.path());
  c.models = {agg::ModelKind::kClam, agg::ModelKind::kGnn};
  cal::PredictionSet p;
  p.push_back({0.0, 1.0}, 1, "a");
  p.push_back({1.0, 0.0}, 0, "b");
  p.push_back({0.2, 0.1}, 1, "c");
  std::vector<FoldResult> folds;
  for (std::size_t k = 0; k < 3; ++k) {
    FoldResult f;
    f.model = agg::ModelKind::kClam;
    f.fold = k;
    f.validation = p;
    f.id = evaluate_set(p, c.calibration, 1.0 + double(k));
    f.ood = f.id;
    f.failed = k == 1;
    if (f.failed) f.failure = "every step non-finite";
    folds.push_back(f);
  }
  FoldResult dead;
  dead.model = agg::ModelKind::kGnn;
  dead.failed = true;
  folds.push_back(dead);

  const auto a = aggregate_results(folds, c);
  EXPECT_EQ(a.at("clam").at("id").at("auroc").n, 2u);
  EXPECT_EQ(a.count("gnn"), 0u);

  ExperimentResult r;
  r.config = c;
  r.folds = folds;
  r.aggregate = a;
  emit_report(r, dir.path());
  const auto lines = lines_of(read_file(dir.path() / "summary.csv"));
  EXPECT_EQ(lines.size(), 1 + 2 * 2 * 8u);
  EXPECT_EQ(lines.back(), "gnn,ood,ece_positive_class_ts,,,0,");
  EXPECT_NE(read_file(dir.path() / "summary.md").find("2 fold(s) failed"), std::string::npos);
  EXPECT_EQ(read_results_json(dir.path() / "results.json").folds.size(), 4u);

  for (auto& f : r.folds) f.failed = true;
  EXPECT_THROW(emit_report(r, dir.path()), std::invalid_argument);
}

// Bars as (x, y, width, height) in pixels, in document order.
std::vector<std::array<double, 4>> parse_bars(const std::string& svg) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(svg);
  pt::read_xml(in, tree);
  std::vector<std::array<double, 4>> bars;
  for (const auto& [tag, node] : tree.get_child("svg")) {
    if (tag != "g" || node.get<std::string>("<xmlattr>.class", "") != "bars") continue;
    for (const auto& [rtag, rect] : node) {
      if (rtag != "rect") continue;
      bars.push_back({rect.get<double>("<xmlattr>.x"), rect.get<double>("<xmlattr>.y"),
                      rect.get<double>("<xmlattr>.width"), rect.get<double>("<xmlattr>.height")});
    }
  }
  return bars;
}

TEST(ReliabilitySvg, StrictXmlWithLabelsAndDiagonal) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> conf(300);
  std::vector<int> hit(300);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    conf[i] = u(rng);
    hit[i] = u(rng) < 0.7;
  }
  const auto bins = cal::bin_confidences(conf, hit, 15);
  const std::string svg = reliability_svg(bins, "a <b> & \"c\"");
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(svg);
  ASSERT_NO_THROW(pt::read_xml(in, tree));
  EXPECT_EQ(parse_bars(svg).size(), 15u);
  EXPECT_NE(svg.find("class=\"diagonal\""), std::string::npos);
  EXPECT_NE(svg.find(">Confidence<"), std::string::npos);
  EXPECT_NE(svg.find("Accuracy / proportion of samples"), std::string::npos);
  EXPECT_NE(svg.find("class=\"proportion\""), std::string::npos);
  EXPECT_NE(svg.find("a &lt;b&gt; &amp; &quot;c&quot;"), std::string::npos);
}

TEST(ReliabilitySvg, CalibratedBarsTouchTheDiagonal) {
  // Bin m holds ten samples at confidence just under (m + 1) / 10, m + 1 of
  // them correct, so accuracy equals mean confidence to within 1e-9.
  std::vector<double> conf;
  std::vector<int> hit;
  for (int m = 0; m < 10; ++m) {
    for (int i = 0; i < 10; ++i) {
      conf.push_back((m + 1) / 10.0 - 1e-9);
      hit.push_back(i <= m ? 1 : 0);
    }
  }
  const auto bins = cal::bin_confidences(conf, hit, 10);
  const SvgLayout L;
  const auto bars = parse_bars(reliability_svg(bins, "", L));
  ASSERT_EQ(bars.size(), 10u);
  for (std::size_t m = 0; m < 10; ++m) {
    const auto [x, y, w, h] = bars[m];
    // The diagonal passes through (v, v); the bar top must meet it within the bar's span.
    const double top = (L.top + L.plot - y) / L.plot;
    const double left = (x - L.left) / L.plot, right = (x + w - L.left) / L.plot;
    EXPECT_NEAR(top, *bins[m].mean_confidence, 1e-3);
    EXPECT_GE(top, left - 1e-3);
    EXPECT_LE(top, right + 1e-3);
    EXPECT_NEAR(y + h, L.top + L.plot, 1e-3);
  }
}

TEST(ReliabilitySvg, EmptyBinsAreZeroHeightBars) {
  const std::vector<double> conf{0.95, 0.97};
  const std::vector<int> hit{1, 0};
  const auto bins = cal::bin_confidences(conf, hit, 10);
  const auto bars = parse_bars(reliability_svg(bins));
  ASSERT_EQ(bars.size(), 10u);
  for (std::size_t m = 0; m < 9; ++m) EXPECT_EQ(bars[m][3], 0.0);
  EXPECT_GT(bars[9][3], 0.0);
  // Contiguous: each bar starts where the previous one ends.
  for (std::size_t m = 1; m < 10; ++m) EXPECT_NEAR(bars[m][0], bars[m - 1][0] + bars[m - 1][2], 1e-3);
}

TEST(ReliabilitySvg, SingleBinAndFileOutput) {
  TempDir dir;
  const std::vector<double> conf{0.3};
  const std::vector<int> hit{1};
  const auto bins = cal::bin_confidences(conf, hit, 1);
  render_reliability_svg(bins, dir.path() / "one.svg");
  EXPECT_EQ(parse_bars(read_file(dir.path() / "one.svg")).size(), 1u);
  EXPECT_THROW(reliability_svg(std::vector<cal::BinStats>{}), std::invalid_argument);
}

#ifdef WSICAL_CLI
int run_cli(const std::string& args) {
  const int status = std::system((std::string(WSICAL_CLI) + " -q " + args + " > /dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  EXPECT_EQ(run_cli("run --config " + (dir.path() / "nope.json").string()), 1);
  write_text(dir.path() / "bad_data.json", R"({"dataset": {"id_manifest": "x.json", "ood_manifest": "y.json"}})");
  EXPECT_EQ(run_cli("run --config " + (dir.path() / "bad_data.json").string() + " --out " +
                    (dir.path() / "o").string()),
            1);
  write_text(dir.path() / "bad_model.json", R"({"models": ["rnn"]})");
  EXPECT_EQ(run_cli("run --config " + (dir.path() / "bad_model.json").string()), 1);

  ExperimentConfig c = tiny_config(dir.path() / "unused");
  c.models = {agg::ModelKind::kClam};
  c.train.epochs = 1;
  write_text(dir.path() / "tiny.json", nlohmann::json(c).dump());
  const std::string out = (dir.path() / "cli_run").string();
  EXPECT_EQ(run_cli("run --config " + (dir.path() / "tiny.json").string() + " --out " + out + " --workers 2"), 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "results.json"));
  EXPECT_EQ(run_cli("report --results " + out + "/results.json --out " + out + "/again"), 0);
  EXPECT_EQ(read_file(fs::path(out) / "summary.csv"), read_file(fs::path(out) / "again" / "summary.csv"));
  EXPECT_EQ(run_cli("calibrate --predictions " + out + "/predictions/clam_fold0.json --out " + out + "/cal.json"), 0);
  const auto cal_json = harness::read_json_file(fs::path(out) / "cal.json");
  const auto stored = read_results_json(fs::path(out) / "results.json");
  EXPECT_EQ(cal_json.at("temperature").get<double>(), stored.folds.front().temperature);
  EXPECT_EQ(run_cli("train --config " + (dir.path() / "tiny.json").string() + " --fold 7 --out " + out), 1);
  EXPECT_EQ(run_cli("generate --out " + (dir.path() / "gen").string() + " --config " +
                    (dir.path() / "tiny.json").string()),
            0);
  EXPECT_EQ(data::load_bag_manifest(dir.path() / "gen" / "id" / "manifest.json").size(), 20u);
}
#endif

}  // namespace
