// End-to-end acceptance checks, one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,5,9] [--epochs N] [--out DIR]
//
// Criteria 5, 8 and 9 share one full separable run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "primitive_cases.hpp"
#include "wsical/aggregators.hpp"
#include "wsical/calibration.hpp"
#include "wsical/diffcore.hpp"
#include "wsical/harness.hpp"

namespace fs = std::filesystem;
using namespace wsical;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string strf(const char* f, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

data::FeatureBag random_bag(std::size_t n, std::size_t dim, std::uint64_t seed, int label) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g(0.0f, 1.0f);
  data::FeatureBag bag;
  bag.slide_id = "bag" + std::to_string(seed);
  bag.label = label;
  bag.dim = dim;
  const auto side = std::uint32_t(std::ceil(std::sqrt(double(n))));
  for (std::size_t i = 0; i < n; ++i) bag.coords.push_back({std::uint32_t(i) / side, std::uint32_t(i) % side});
  bag.features.resize(n * dim);
  for (float& v : bag.features) v = g(rng);
  return bag;
}

data::FeatureBag permute(const data::FeatureBag& bag, std::uint64_t seed) {
  std::vector<std::size_t> order(bag.n_patches());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return data::select_patches(bag, order);
}

// ---------------------------------------------------------------- 1

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  std::size_t checks = 0;
  bool pass = true;
  auto record = [&](const ad::GradCheckReport& r, const std::string& what) {
    for (const auto& e : r.entries) {
      checks += e.checked;
      if (e.max_rel_error > worst) {
        worst = e.max_rel_error;
        worst_name = what + "/" + e.name;
      }
      pass = pass && e.passed && e.max_rel_error < 1e-3;
    }
  };

  std::size_t n_primitives = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    ad::ParamSet<double> params;
    auto cases = testing::primitive_cases(params, rng);
    n_primitives = cases.size();
    for (auto& c : cases) record(ad::check_gradients(c.build, params, {.step = 1e-5, .tolerance = 1e-3}), c.name);
  }

  for (auto kind : agg::kAllModels) {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      auto model = agg::make_model<double>(kind, 10, agg::ModelConfig{}, seed);
      const auto bag = random_bag(seed == 0 ? 12 : 20, 10, seed + 20, int(seed % 2));
      auto loss = [&](ad::Tape<double>& tape, ad::ParamSet<double>& ps) {
        return agg::forward(tape, kind, 10, model.config, ps, bag).loss;
      };
      record(ad::check_gradients(loss, model.params,
                                 {.step = 1e-5, .tolerance = 1e-3, .max_entries_per_param = 4, .seed = seed}),
             agg::to_string(kind));
    }
  }
  const double secs = seconds_since(t0);
  pass = pass && secs < 120;
  return {pass, strf("%zu primitives x 5 seeds + 3 models x 2 bags (12, 20 patches); %zu entries, max rel err %.2e "
                     "(%s), %.1fs",
                     n_primitives, checks, worst, worst_name.c_str(), secs)};
}

// ---------------------------------------------------------------- 2

double ece_oracle(const std::vector<double>& conf, const std::vector<int>& correct, std::size_t M) {
  double ece = 0;
  for (std::size_t m = 1; m <= M; ++m) {
    const double lo = double(m - 1) / double(M), hi = double(m) / double(M);
    double c = 0, a = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < conf.size(); ++i) {
      const bool in = (conf[i] >= lo && conf[i] < hi) || (m == M && conf[i] >= hi);
      if (!in) continue;
      c += conf[i];
      a += correct[i];
      ++n;
    }
    if (n > 0) ece += double(n) / double(conf.size()) * std::abs(c / double(n) - a / double(n));
  }
  return ece;
}

Outcome ece_oracle_equivalence() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t Ms[] = {1, 5, 10, 15};
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t M = Ms[trial % 4];
    const std::size_t n = 1 + rng() % 1000;
    std::vector<double> conf(n);
    std::vector<int> correct(n);
    for (std::size_t i = 0; i < n; ++i) {
      // A quarter of the samples sit exactly on bin edges.
      conf[i] = rng() % 4 == 0 ? double(rng() % (M + 1)) / double(M) : u(rng);
      correct[i] = u(rng) < conf[i] ? 1 : 0;
    }
    worst = std::max(worst, std::abs(cal::compute_ece(conf, correct, M) - ece_oracle(conf, correct, M)));
  }
  const std::vector<double> hand_conf{0.95, 0.85, 0.65, 0.55};
  const std::vector<int> hand_correct{1, 0, 1, 1};
  const double hand = cal::compute_ece(hand_conf, hand_correct, 10);
  const bool pass = worst <= 1e-12 && std::abs(hand - 0.425) <= 1e-12;
  return {pass, strf("100 random instances, max |diff| %.1e; hand case %.15f", worst, hand)};
}

// ---------------------------------------------------------------- 3

cal::PredictionSet calibrated_set(std::size_t n, std::uint64_t seed, double logit_scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  cal::PredictionSet p;
  for (std::size_t i = 0; i < n; ++i) {
    double q = u(rng);
    q = std::clamp(q, 1e-12, 1 - 1e-12);
    const int y = u(rng) < q ? 1 : 0;
    p.push_back({0.0, logit_scale * std::log(q / (1 - q))}, y, "s" + std::to_string(i));
  }
  return p;
}

Outcome calibrated_sampler() {
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = calibrated_set(100000, seed);
    worst = std::max(worst, cal::expected_calibration_error(p, 10, cal::BinningMode::kPositiveClass));
  }
  return {worst < 0.01, strf("n = 100000, 5 seeds, max positive-class ECE %.5f", worst)};
}

// ---------------------------------------------------------------- 4

Outcome temperature_recovery() {
  double t_min = 1e9, t_max = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const double T = cal::fit_temperature(calibrated_set(20000, 50 + seed, 2.0));
    t_min = std::min(t_min, T);
    t_max = std::max(t_max, T);
  }

  std::mt19937_64 rng(9);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  std::size_t inputs = 0, nll_ok = 0, rank_ok = 0;
  for (int trial = 0; trial < 60; ++trial) {
    cal::PredictionSet p;
    const std::size_t n = 2 + rng() % 400;
    const double scale = std::pow(10.0, u(rng) * 3 - 1.5);
    const double bias = g(rng);
    for (std::size_t i = 0; i < n; ++i) {
      const int y = int(i % 2);
      const double signal = trial % 3 == 0 ? 0.0 : (y ? 1.0 : -1.0) * u(rng);
      p.push_back({scale * g(rng), scale * (g(rng) + signal) + bias}, y, std::to_string(i));
    }
    ++inputs;
    const double T = cal::fit_temperature(p);
    if (cal::nll(p, T) <= cal::nll(p, 1.0)) ++nll_ok;

    // Rank metrics from probabilities before and after scaling.
    std::vector<double> s1, sT;
    std::vector<int> y1, yT;
    for (const auto& z : p.logits) {
      const auto a = cal::softmax(z, 1.0), b = cal::softmax(z, T);
      s1.push_back(z[1] - z[0]);
      sT.push_back((z[1] - z[0]) / T);
      y1.push_back(a[1] > a[0] ? 1 : 0);
      yT.push_back(b[1] > b[0] ? 1 : 0);
    }
    const bool same = cal::auroc(s1, p.labels) == cal::auroc(sT, p.labels) &&
                      cal::balanced_accuracy(y1, p.labels) == cal::balanced_accuracy(yT, p.labels) &&
                      cal::evaluate(p, 10, cal::BinningMode::kMaxConfidence).auroc ==
                          cal::evaluate(p, 10, cal::BinningMode::kMaxConfidence, T).auroc;
    if (same) ++rank_ok;
  }
  const bool pass = t_min >= 1.8 && t_max <= 2.2 && nll_ok == inputs && rank_ok == inputs;
  return {pass, strf("T* over 5 seeds in [%.4f, %.4f]; NLL(T*) <= NLL(1) on %zu/%zu inputs; rank metrics identical on "
                     "%zu/%zu",
                     t_min, t_max, nll_ok, inputs, rank_ok, inputs)};
}

// ---------------------------------------------------------------- 5, 8, 9

harness::ExperimentConfig separable_config(const fs::path& out, std::size_t epochs) {
  harness::ExperimentConfig c;
  data::DatasetSpec spec;
  spec.n_slides = 200;
  spec.patches_min = 100;
  spec.patches_max = 400;
  spec.feature_dim = 64;
  spec.signal_shift = 2.0;
  spec.seed = 7;
  c.dataset.synthetic = spec;
  c.train.epochs = epochs;
  c.seed = 1;
  c.out_dir = out.string();
  return c;
}

struct SeparableRun {
  harness::ExperimentResult result;
  double seconds = 0;
};

Outcome separable_auroc(const SeparableRun& run) {
  bool pass = run.seconds < 15 * 60;
  std::string detail;
  for (auto kind : run.result.config.models) {
    double lo = 1;
    std::size_t folds = 0;
    for (const auto& f : run.result.folds) {
      if (f.model != kind || f.failed) continue;
      lo = std::min(lo, f.id.pre.auroc);
      ++folds;
    }
    const auto& s = run.result.aggregate.at(agg::to_string(kind)).at("id").at("auroc");
    pass = pass && folds == 5 && lo >= 0.90;
    detail += strf("%s ID AUROC %s (min fold %.3f); ", agg::to_string(kind).c_str(), harness::format_stat(s).c_str(), lo);
  }
  detail += strf("%zu epochs, %.0fs total", run.result.config.train.epochs, run.seconds);
  return {pass, detail};
}

std::vector<double> csv_column(const fs::path& path, std::size_t column) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (std::size_t i = 0; i <= column; ++i) std::getline(ss, cell, ',');
    out.push_back(std::stod(cell));
  }
  return out;
}

// Every regular file under `root`, relative path -> bytes.
std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] =
        std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return out;
}

Outcome protocol_structure(const SeparableRun& run, const fs::path& scratch) {
  const auto& r = run.result;
  const fs::path out = r.config.out_dir;
  std::map<agg::ModelKind, std::size_t> per_model;
  for (const auto& f : r.folds) per_model[f.model] += f.failed ? 0 : 1;
  bool folds_ok = per_model.size() == 3;
  for (auto& [kind, n] : per_model) folds_ok = folds_ok && n == 5;

  std::ifstream table(out / "table_ece_max_confidence.csv");
  std::string header;
  std::getline(table, header);
  const bool table_ok = header == "model,ID ECE,ID ECE (TS),OOD ECE,OOD ECE (TS)";

  std::size_t csvs = 0;
  double worst = 0;
  for (const auto& e : fs::directory_iterator(out / "reliability")) {
    if (e.path().extension() != ".csv") continue;
    ++csvs;
    const auto prop = csv_column(e.path(), 6);
    worst = std::max(worst, std::abs(std::accumulate(prop.begin(), prop.end(), 0.0) - 1.0));
  }
  const bool csv_ok = csvs == 24 && worst < 1e-5;

  // Determinism: a smaller full run (all three models, default widths) twice,
  // with different worker counts, compared file by file.
  auto small = [&](const char* name, std::size_t workers) {
    harness::ExperimentConfig c = separable_config(scratch / name, 2);
    c.dataset.synthetic->n_slides = 40;
    c.dataset.synthetic->n_ood_slides = 12;
    c.dataset.synthetic->patches_min = 20;
    c.dataset.synthetic->patches_max = 60;
    c.workers = workers;
    harness::run_experiment(c);
    return tree_bytes(c.out_dir);
  };
  const auto a = small("rerun_a", 1);
  const auto b = small("rerun_b", 3);
  const bool same = a == b && a.size() > 0;

  return {folds_ok && table_ok && csv_ok && same,
          strf("5 successful folds per model: %s; Table 2 header: %s; %zu reliability CSVs, max |sum - 1| %.1e; rerun "
               "byte-identical over %zu files: %s",
               folds_ok ? "yes" : "no", table_ok ? "yes" : "no", csvs, worst, a.size(), same ? "yes" : "no")};
}

Outcome extremity(const SeparableRun& run) {
  const fs::path csv = fs::path(run.result.config.out_dir) / "reliability" / "transformer_id_positive_class.csv";
  const auto prop = csv_column(csv, 6);
  const double outer = prop.front() + prop.back();
  double clam = 0, gnn = 0;
  for (const char* m : {"clam", "gnn"}) {
    const auto p = csv_column(fs::path(run.result.config.out_dir) / "reliability" /
                                  (std::string(m) + "_id_positive_class.csv"),
                              6);
    (std::string(m) == "clam" ? clam : gnn) = p.front() + p.back();
  }
  return {prop.size() == 10 && outer > 0.8,
          strf("transformer mass in bins 1 and 10: %.3f (clam %.3f, gnn %.3f), pooled over 5 folds", outer, clam, gnn)};
}

// ---------------------------------------------------------------- 6

Outcome null_signal(const fs::path& scratch, std::size_t epochs) {
  harness::ExperimentConfig c;
  data::DatasetSpec spec;
  spec.n_slides = 600;
  spec.n_ood_slides = 20;
  spec.patches_min = 20;
  spec.patches_max = 60;
  spec.feature_dim = 64;
  spec.signal_shift = 0.0;
  spec.seed = 13;
  c.dataset.synthetic = spec;
  c.train.epochs = epochs;
  c.seed = 2;
  c.save_checkpoints = false;
  c.out_dir = (scratch / "null").string();
  const auto t0 = Clock::now();
  const auto r = harness::run_experiment(c);
  bool pass = true;
  std::string detail;
  for (auto kind : c.models) {
    const auto& s = r.aggregate.at(agg::to_string(kind)).at("id").at("auroc");
    pass = pass && s.n == 5 && std::abs(s.mean - 0.5) <= 0.1;
    detail += strf("%s ID AUROC %s; ", agg::to_string(kind).c_str(), harness::format_stat(s).c_str());
  }
  detail += strf("%zu test slides, %zu epochs, %.0fs", r.n_test, epochs, seconds_since(t0));
  return {pass, detail};
}

// ---------------------------------------------------------------- 7

Outcome permutation_invariance() {
  const std::size_t dim = 32;
  double worst_tf = 0, worst_gnn = 0;
  auto tf = agg::make_model<float>(agg::ModelKind::kTransformer, dim, agg::ModelConfig{}, 3);
  auto gnn = agg::make_model<float>(agg::ModelKind::kGnn, dim, agg::ModelConfig{}, 4);
  auto diff = [](const agg::SlideOutput& a, const agg::SlideOutput& b) {
    return std::max(std::abs(a.logits[0] - b.logits[0]), std::abs(a.logits[1] - b.logits[1]));
  };
  for (std::size_t n : {37u, 400u, 5000u}) {
    const auto bag = random_bag(n, dim, 100 + n, 1);
    const auto shuffled = permute(bag, n);
    worst_tf = std::max(worst_tf, diff(agg::predict(tf, bag), agg::predict(tf, shuffled)));
    if (n <= 400) worst_gnn = std::max(worst_gnn, diff(agg::predict(gnn, bag), agg::predict(gnn, shuffled)));
  }

  const auto big = random_bag(6000, dim, 77, 0);
  const auto out = agg::predict(tf, big);
  std::mt19937_64 rng(5);
  const auto idx = agg::subsample_indices(6000, 5000, rng);
  const bool unique = std::set<std::size_t>(idx.begin(), idx.end()).size() == 5000 && idx.back() < 6000;
  const bool pass = worst_tf < 1e-5 && worst_gnn < 1e-5 && out.n_instances_used == 5000 && unique;
  return {pass, strf("max logit change: transformer %.2e (n = 37, 400, 5000), gnn %.2e (n = 37, 400); 6000-patch bag "
                     "encodes %zu patches",
                     worst_tf, worst_gnn, out.n_instances_used)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  std::vector<int> only;
  std::size_t epochs = 5;
  std::size_t null_epochs = 3;
  std::string out = "acceptance_runs";
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--epochs", epochs, "Epochs for the separable run (at most 50)")->check(CLI::Range(1, 50));
  app.add_option("--null-epochs", null_epochs, "Epochs for the null-signal run")->check(CLI::Range(1, 50));
  app.add_option("--out", out, "Scratch directory for experiment outputs");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}
                                              : std::set<int>(only.begin(), only.end());
  const fs::path scratch = fs::absolute(out);
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    if (!selected.count(id)) return;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient fidelity", gradient_fidelity);
  report(2, "ECE oracle equivalence", ece_oracle_equivalence);
  report(3, "calibrated sampler", calibrated_sampler);
  report(4, "temperature recovery", temperature_recovery);

  std::optional<SeparableRun> run;
  auto separable = [&]() -> const SeparableRun& {
    if (!run) {
      const auto t0 = Clock::now();
      auto r = harness::run_experiment(separable_config(scratch / "separable", epochs));
      run = SeparableRun{std::move(r), seconds_since(t0)};
    }
    return *run;
  };
  report(5, "end-to-end separable run", [&] { return separable_auroc(separable()); });
  report(6, "null-signal run", [&] { return null_signal(scratch, null_epochs); });
  report(7, "permutation invariance", permutation_invariance);
  report(8, "protocol structure", [&] { return protocol_structure(separable(), scratch); });
  report(9, "extremity observation", [&] { return extremity(separable()); });

  return failures == 0 ? 0 : 1;
}
