#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "ntk/error.hpp"
#include "ntk/experiment.hpp"
#include "ntk/outputs.hpp"

using namespace ntk;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_sweep() {
  ExperimentConfig c;
  c.kind = ExperimentKind::width_sweep;
  c.data.n_points = 20;
  c.arch.depth = 2;
  c.widths = {24, 48};
  c.seeds = {0, 1};
  c.betas = {0.5};
  c.train.max_steps = 3000;
  c.train.grad_tol = 1e-7;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

const ResultRow& find_row(const std::vector<ResultRow>& rows, std::int64_t width, std::int64_t seed,
                          const std::string& metric) {
  const auto it = std::find_if(rows.begin(), rows.end(), [&](const ResultRow& r) {
    return r.width == width && r.seed == seed && r.metric == metric;
  });
  REQUIRE(it != rows.end());
  return *it;
}

using Series = std::map<std::tuple<std::int64_t, std::int64_t, std::string>, std::vector<double>>;

Series group(const std::vector<PredictionRow>& rows) {
  Series s;
  for (const PredictionRow& p : rows) {
    auto& v = s[{p.width, p.seed, p.series}];
    REQUIRE(p.index == static_cast<std::int64_t>(v.size()));
    v.push_back(p.value);
  }
  return s;
}

}  // namespace

TEST_CASE("experiment config round-trips and rejects unknown keys") {
  ExperimentConfig c = tiny_sweep();
  c.train.eta0 = 0.125;
  c.arch.activation = Activation::softplus;
  c.n2_values = {1, 2};
  const ExperimentConfig back = ExperimentConfig::from_config(c.to_config());
  CHECK(back.to_config().serialize() == c.to_config().serialize());
  CHECK(back.train.eta0 == 0.125);
  CHECK(back.arch.activation == Activation::softplus);
  CHECK(back.widths == c.widths);

  KeyValueConfig kv = c.to_config();
  kv.set("arch.widht", "3");
  CHECK_THROWS_AS(ExperimentConfig::from_config(kv), InvalidArgument);
  kv = c.to_config();
  kv.set("kind", "sweepz");
  CHECK_THROWS_AS(ExperimentConfig::from_config(kv), InvalidArgument);
  kv = c.to_config();
  kv.set("seeds", "");
  CHECK_THROWS_AS(ExperimentConfig::from_config(kv), InvalidArgument);
  kv = c.to_config();
  kv.set("data.noise_sigma", "-1");
  CHECK_THROWS_AS(ExperimentConfig::from_config(kv), InvalidArgument);
  kv = c.to_config();
  kv.set("data.source", "csv");
  CHECK_THROWS_AS(ExperimentConfig::from_config(kv), InvalidArgument);
  kv = c.to_config();
  kv.set("threads", "0");
  CHECK_THROWS_AS(ExperimentConfig::from_config(kv), InvalidArgument);
  CHECK(parse_experiment_kind("transfer") == ExperimentKind::transfer);
}

TEST_CASE("width sweep: deterministic, order independent, recomputable") {
  ExperimentConfig c = tiny_sweep();
  const ExperimentResult serial = run_width_sweep(c);
  c.threads = 3;
  const ExperimentResult threaded = run_width_sweep(c);
  const std::string a = strip_timing(results_csv(serial.rows));
  CHECK(a == strip_timing(results_csv(threaded.rows)));
  CHECK(predictions_csv(serial.predictions) == predictions_csv(threaded.predictions));

  // A cell computed alone matches the same cell inside the grid.
  ExperimentConfig single = tiny_sweep();
  single.widths = {48};
  single.seeds = {1};
  const ExperimentResult alone = run_width_sweep(single);
  for (const ResultRow& r : alone.rows) CHECK(find_row(serial.rows, 48, 1, r.metric).value == r.value);

  CHECK(serial.rows.size() == 4 * 9);
  CHECK(std::is_sorted(serial.rows.begin(), serial.rows.end()));
  for (const ResultRow& r : serial.rows) {
    CHECK(std::isfinite(r.value));
    CHECK(r.metric != "failed");
  }

  // Metrics are recomputable from the persisted predictions, after a CSV round trip.
  const Series s = group(parse_predictions_csv(predictions_csv(serial.predictions)));
  for (std::int64_t w : {24, 48}) {
    for (std::int64_t seed : {0, 1}) {
      const auto& net = s.at({w, seed, "network"});
      const auto& kr = s.at({w, seed, "kernel_ridge"});
      const auto& y = s.at({w, seed, "target"});
      double sup = 0.0, mse_net = 0.0, mse_kr = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        sup = std::max(sup, std::abs(net[i] - kr[i]));
        mse_net += (net[i] - y[i]) * (net[i] - y[i]) / static_cast<double>(y.size());
        mse_kr += (kr[i] - y[i]) * (kr[i] - y[i]) / static_cast<double>(y.size());
      }
      CHECK(find_row(serial.rows, w, seed, "function_sup_diff").value == sup);
      CHECK(find_row(serial.rows, w, seed, "network_val_mse").value == doctest::Approx(mse_net).epsilon(1e-12));
      CHECK(find_row(serial.rows, w, seed, "kernel_ridge_val_mse").value ==
            doctest::Approx(mse_kr).epsilon(1e-12));
    }
  }
}

TEST_CASE("a failing cell yields a single failed row and the others survive") {
  ExperimentConfig c = tiny_sweep();
  c.widths = {24};
  c.seeds = {0};
  c.train.eta0 = 1e4;
  const ExperimentResult r = run_width_sweep(c);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].metric == "failed");
  CHECK(r.rows[0].value == 1.0);
  CHECK(r.predictions.empty());
}

TEST_CASE("results CSV round trip and timing strip") {
  std::vector<ResultRow> rows{{"width_sweep", 256, 2, 0.5, 3, "steps", 0.1, 1.25},
                              {"transfer", 1024, 2, 0.5, 0, "test_mse_vanilla@n2=5", 1.0 / 3.0, 7.0}};
  const std::string text = results_csv(rows);
  CHECK(text.rfind(std::string(kResultsHeader) + "\n", 0) == 0);
  const auto back = parse_results_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[1].value == 1.0 / 3.0);
  CHECK(back[1].metric == "test_mse_vanilla@n2=5");
  CHECK(results_csv(back) == text);

  std::vector<ResultRow> slower = rows;
  slower[0].seconds = 99.0;
  CHECK(strip_timing(results_csv(slower)) == strip_timing(text));
  slower[0].value = 0.2;
  CHECK(strip_timing(results_csv(slower)) != strip_timing(text));

  CHECK_THROWS_AS(parse_results_csv("bad,header\n"), ParseError);
  CHECK_THROWS_AS(parse_results_csv(std::string(kResultsHeader) + "\nwidth_sweep,x,2,0.5,3,steps,1,0\n"),
                  ParseError);
  CHECK_THROWS_AS(parse_results_csv(std::string(kResultsHeader) + "\nwidth_sweep,1,2\n"), ParseError);
}

TEST_CASE("manifest replay reproduces results and predictions byte for byte") {
  const fs::path root = fs::temp_directory_path() / "ntk_test_manifest";
  fs::remove_all(root);
  ExperimentConfig c = tiny_sweep();
  c.widths = {24};
  c.output_dir = root / "a";
  const OutputFiles first = emit_outputs(run_experiment(c), c, c.output_dir);
  CHECK(slurp(first.plot).find("set logscale xy") != std::string::npos);

  ExperimentConfig replay = ExperimentConfig::from_config(KeyValueConfig::load(first.manifest));
  replay.output_dir = root / "b";
  const OutputFiles second = emit_outputs(run_experiment(replay), replay, replay.output_dir);
  CHECK(strip_timing(slurp(first.results)) == strip_timing(slurp(second.results)));
  CHECK(slurp(first.predictions) == slurp(second.predictions));
  CHECK(read_results_csv(second.results).size() == 2 * 9);
  fs::remove_all(root);
}

TEST_CASE("tiny transfer, ensemble and single-train runs") {
  ExperimentConfig t;
  t.kind = ExperimentKind::transfer;
  t.arch.width = 32;
  t.arch.activation = Activation::softplus;
  t.seeds = {0};
  t.n1 = 20;
  t.n2_values = {0, 3};
  t.n_test = 10;
  t.train.max_steps = 2000;
  t.train.grad_tol = 1e-6;
  const ExperimentResult tr = run_experiment(t);
  CHECK(tr.rows.size() == 4);
  // Without task-2 data the vanilla predictor is the zero prior.
  const Series ts = group(tr.predictions);
  const auto& target = ts.at({32, 0, "target"});
  double zero_mse = 0.0;
  for (double v : target) zero_mse += v * v / static_cast<double>(target.size());
  CHECK(find_row(tr.rows, 32, 0, "test_mse_vanilla@n2=0").value == doctest::Approx(zero_mse).epsilon(1e-12));
  for (double v : ts.at({32, 0, "vanilla@n2=0"})) CHECK(v == 0.0);

  ExperimentConfig e;
  e.kind = ExperimentKind::ensemble;
  e.arch.width = 32;
  e.seeds = {0};
  e.ensemble_members = 12;
  e.ensemble_train = 4;
  e.ensemble_test = 2;
  const ExperimentResult er = run_experiment(e);
  CHECK(er.rows.size() == 2 * 6);
  CHECK(find_row(er.rows, 32, 0, "predicted_var@0").value > 0.0);
  CHECK(find_row(er.rows, 32, 0, "mc_var@1").value > 0.0);

  ExperimentConfig s = tiny_sweep();
  s.kind = ExperimentKind::single_train;
  s.arch.width = 24;
  s.seeds = {2};
  const ExperimentResult sr = run_experiment(s);
  CHECK(find_row(sr.rows, 24, 2, "converged").value == 1.0);
  CHECK(find_row(sr.rows, 24, 2, "grad_norm").value <= s.train.grad_tol);
}
