#include "ntk/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>
#include <tuple>

#include "ntk/error.hpp"
#include "ntk/kernel.hpp"
#include "ntk/lin.hpp"
#include "ntk/random.hpp"

namespace ntk {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "kind",          "data.source",       "data.dim",          "data.n_points",
      "data.noise_sigma", "data.range_lo",  "data.range_hi",     "data.seed",
      "data.csv_path", "data.target_column", "data.normalize",   "data.max_train_rows",
      "arch.depth",    "arch.width",        "arch.activation",   "arch.parametrization",
      "arch.sigma_w",  "arch.sigma_b",      "arch.train_first_layer_and_biases",
      "train.eta0",    "train.max_steps",   "train.grad_tol",    "train.flow_step",
      "train.record_every", "train.allow_factored", "train.record_jacobian_drift",
      "widths",        "seeds",             "betas",             "output_dir",
      "threads",       "transfer.n1",       "transfer.n2_values", "transfer.n_test",
      "transfer.identical_tasks", "ensemble.members", "ensemble.train_points",
      "ensemble.test_points", "version"};
  return keys;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Runs independent cells on a small pool; each cell owns its output slot.
void run_cells(std::vector<std::function<void()>>& cells, std::int64_t threads) {
  const std::size_t workers =
      std::min<std::size_t>(cells.size(), static_cast<std::size_t>(std::max<std::int64_t>(1, threads)));
  if (workers <= 1) {
    for (auto& c : cells) c();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < cells.size(); i = next++) cells[i]();
    });
  }
  for (auto& t : pool) t.join();
}

ExperimentResult merge(std::vector<ExperimentResult>& parts) {
  ExperimentResult out;
  for (auto& p : parts) {
    out.rows.insert(out.rows.end(), p.rows.begin(), p.rows.end());
    out.predictions.insert(out.predictions.end(), p.predictions.begin(), p.predictions.end());
  }
  std::stable_sort(out.rows.begin(), out.rows.end());
  std::stable_sort(out.predictions.begin(), out.predictions.end());
  return out;
}

struct CellKey {
  std::string experiment;
  std::int64_t width;
  std::int64_t depth;
  double beta;
  std::int64_t seed;
};

struct CellWriter {
  CellKey key;
  ExperimentResult& out;

  void row(const std::string& metric, double value, double seconds) {
    out.rows.push_back({key.experiment, key.width, key.depth, key.beta, key.seed, metric, value,
                        seconds});
  }
  void series(const std::string& name, const Vector& values) {
    for (Eigen::Index i = 0; i < values.size(); ++i) {
      out.predictions.push_back({key.experiment, key.width, key.beta, key.seed, name, i, values(i)});
    }
  }
  void failed(const std::exception& e, double seconds) {
    std::cerr << "ntk-lab: " << key.experiment << " cell width=" << key.width
              << " beta=" << key.beta << " seed=" << key.seed << " failed: " << e.what() << "\n";
    row("failed", 1.0, seconds);
  }
};

double mse(const Vector& a, const Vector& b) {
  if (a.size() == 0) return 0.0;
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

// Task-2 initializations use a seed disjoint from task 1's.
constexpr std::uint64_t kSecondTaskSeedOffset = 0x9e3779b97f4a7c15ULL;

}  // namespace

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::width_sweep: return "width_sweep";
    case ExperimentKind::transfer: return "transfer";
    case ExperimentKind::ensemble: return "ensemble";
    case ExperimentKind::single_train: return "single_train";
  }
  return "width_sweep";
}

ExperimentKind parse_experiment_kind(const std::string& s) {
  if (s == "width_sweep" || s == "sweep") return ExperimentKind::width_sweep;
  if (s == "transfer") return ExperimentKind::transfer;
  if (s == "ensemble") return ExperimentKind::ensemble;
  if (s == "single_train" || s == "train") return ExperimentKind::single_train;
  throw InvalidArgument("unknown experiment kind '" + s + "'");
}

MlpArchitecture ArchSpec::build(std::size_t input_dim, std::size_t w) const {
  MlpArchitecture a = MlpArchitecture::uniform(input_dim, w, static_cast<std::size_t>(depth),
                                               activation, parametrization, sigma_w, sigma_b);
  a.train_first_layer_and_biases = train_first_layer_and_biases;
  a.validate();
  return a;
}

ExperimentConfig ExperimentConfig::from_config(const KeyValueConfig& kv) {
  for (const auto& [key, value] : kv.entries()) {
    if (!known_keys().count(key)) throw InvalidArgument("config: unknown key '" + key + "'");
  }
  ExperimentConfig c;
  c.kind = parse_experiment_kind(kv.get_string("kind", to_string(c.kind)));

  const std::string source = kv.get_string("data.source", "synthetic");
  if (source == "synthetic") {
    c.data.source = DataSpec::Source::synthetic;
  } else if (source == "csv") {
    c.data.source = DataSpec::Source::csv;
  } else {
    throw InvalidArgument("config: data.source must be synthetic or csv");
  }
  c.data.dim = kv.get_int("data.dim", c.data.dim);
  c.data.n_points = kv.get_int("data.n_points", c.data.n_points);
  c.data.noise_sigma = kv.get_double("data.noise_sigma", c.data.noise_sigma);
  c.data.range_lo = kv.get_double("data.range_lo", c.data.range_lo);
  c.data.range_hi = kv.get_double("data.range_hi", c.data.range_hi);
  c.data.data_seed = static_cast<std::uint64_t>(kv.get_int("data.seed", 0));
  c.data.csv_path = kv.get_string("data.csv_path", "");
  c.data.target_column = kv.get_string("data.target_column", "");
  c.data.normalize = kv.get_bool("data.normalize", c.data.normalize);
  c.data.max_train_rows = kv.get_int("data.max_train_rows", c.data.max_train_rows);

  c.arch.depth = kv.get_int("arch.depth", c.arch.depth);
  c.arch.width = kv.get_int("arch.width", c.arch.width);
  c.arch.activation = parse_activation(kv.get_string("arch.activation", to_string(c.arch.activation)));
  c.arch.parametrization =
      parse_parametrization(kv.get_string("arch.parametrization", to_string(c.arch.parametrization)));
  c.arch.sigma_w = kv.get_double("arch.sigma_w", c.arch.sigma_w);
  c.arch.sigma_b = kv.get_double("arch.sigma_b", c.arch.sigma_b);
  c.arch.train_first_layer_and_biases =
      kv.get_bool("arch.train_first_layer_and_biases", c.arch.train_first_layer_and_biases);

  const std::string eta = kv.get_string("train.eta0", "auto");
  if (eta != "auto") c.train.eta0 = kv.get_double("train.eta0", 0.0);
  c.train.max_steps = static_cast<std::size_t>(
      kv.get_int("train.max_steps", static_cast<std::int64_t>(c.train.max_steps)));
  c.train.grad_tol = kv.get_double("train.grad_tol", c.train.grad_tol);
  c.train.flow_step = kv.get_double("train.flow_step", c.train.flow_step);
  c.train.record_every = static_cast<std::size_t>(
      kv.get_int("train.record_every", static_cast<std::int64_t>(c.train.record_every)));
  c.train.allow_factored = kv.get_bool("train.allow_factored", c.train.allow_factored);
  c.train.record_jacobian_drift =
      kv.get_bool("train.record_jacobian_drift", c.train.record_jacobian_drift);

  c.widths = kv.get_int_list("widths", c.widths);
  c.seeds = kv.get_int_list("seeds", c.seeds);
  c.betas = kv.get_double_list("betas", c.betas);
  c.output_dir = kv.get_string("output_dir", "");
  c.threads = kv.get_int("threads", c.threads);

  c.n1 = kv.get_int("transfer.n1", c.n1);
  c.n2_values = kv.get_int_list("transfer.n2_values", c.n2_values);
  c.n_test = kv.get_int("transfer.n_test", c.n_test);
  c.identical_tasks = kv.get_bool("transfer.identical_tasks", c.identical_tasks);

  c.ensemble_members = kv.get_int("ensemble.members", c.ensemble_members);
  c.ensemble_train = kv.get_int("ensemble.train_points", c.ensemble_train);
  c.ensemble_test = kv.get_int("ensemble.test_points", c.ensemble_test);
  c.validate();
  return c;
}

KeyValueConfig ExperimentConfig::to_config() const {
  KeyValueConfig kv;
  kv.set("kind", to_string(kind));
  kv.set("data.source", data.source == DataSpec::Source::csv ? "csv" : "synthetic");
  kv.set("data.dim", std::to_string(data.dim));
  kv.set("data.n_points", std::to_string(data.n_points));
  kv.set("data.noise_sigma", format_double(data.noise_sigma));
  kv.set("data.range_lo", format_double(data.range_lo));
  kv.set("data.range_hi", format_double(data.range_hi));
  kv.set("data.seed", std::to_string(data.data_seed));
  if (!data.csv_path.empty()) kv.set("data.csv_path", data.csv_path);
  if (!data.target_column.empty()) kv.set("data.target_column", data.target_column);
  kv.set("data.normalize", data.normalize ? "true" : "false");
  kv.set("data.max_train_rows", std::to_string(data.max_train_rows));
  kv.set("arch.depth", std::to_string(arch.depth));
  kv.set("arch.width", std::to_string(arch.width));
  kv.set("arch.activation", to_string(arch.activation));
  kv.set("arch.parametrization", to_string(arch.parametrization));
  kv.set("arch.sigma_w", format_double(arch.sigma_w));
  kv.set("arch.sigma_b", format_double(arch.sigma_b));
  kv.set("arch.train_first_layer_and_biases", arch.train_first_layer_and_biases ? "true" : "false");
  kv.set("train.eta0", train.eta0 ? format_double(*train.eta0) : "auto");
  kv.set("train.max_steps", std::to_string(train.max_steps));
  kv.set("train.grad_tol", format_double(train.grad_tol));
  kv.set("train.flow_step", format_double(train.flow_step));
  kv.set("train.record_every", std::to_string(train.record_every));
  kv.set("train.allow_factored", train.allow_factored ? "true" : "false");
  kv.set("train.record_jacobian_drift", train.record_jacobian_drift ? "true" : "false");
  kv.set("widths", join(widths));
  kv.set("seeds", join(seeds));
  kv.set("betas", join(betas));
  if (!output_dir.empty()) kv.set("output_dir", output_dir.string());
  kv.set("threads", std::to_string(threads));
  kv.set("transfer.n1", std::to_string(n1));
  kv.set("transfer.n2_values", join(n2_values));
  kv.set("transfer.n_test", std::to_string(n_test));
  kv.set("transfer.identical_tasks", identical_tasks ? "true" : "false");
  kv.set("ensemble.members", std::to_string(ensemble_members));
  kv.set("ensemble.train_points", std::to_string(ensemble_train));
  kv.set("ensemble.test_points", std::to_string(ensemble_test));
  return kv;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (data.noise_sigma < 0.0) throw InvalidArgument("config: data.noise_sigma must be >= 0");
  if (data.dim < 1 || data.n_points < 2) throw InvalidArgument("config: dataset too small");
  if (!(data.range_lo < data.range_hi)) throw InvalidArgument("config: empty data range");
  if (data.source == DataSpec::Source::csv && (data.csv_path.empty() || data.target_column.empty())) {
    throw InvalidArgument("config: csv data needs data.csv_path and data.target_column");
  }
  if (arch.depth < 0 || arch.width < 1) throw InvalidArgument("config: bad architecture size");
  if (seeds.empty()) throw InvalidArgument("config: seeds must be nonempty");
  if (betas.empty()) throw InvalidArgument("config: betas must be nonempty");
  for (double b : betas) {
    if (!(b >= 0.0)) throw InvalidArgument("config: betas must be nonnegative");
  }
  for (auto s : seeds) {
    if (s < 0) throw InvalidArgument("config: seeds must be nonnegative");
  }
  if (kind == ExperimentKind::width_sweep) {
    if (widths.empty()) throw InvalidArgument("config: widths must be nonempty");
    for (auto w : widths) {
      if (w < 1) throw InvalidArgument("config: widths must be positive");
    }
  }
  if (kind == ExperimentKind::transfer) {
    if (n1 < 1 || n_test < 1) throw InvalidArgument("config: transfer sizes must be positive");
    for (auto n : n2_values) {
      if (n < 0) throw InvalidArgument("config: n2 values must be >= 0");
    }
  }
  if (kind == ExperimentKind::ensemble &&
      (ensemble_members < 2 || ensemble_train < 1 || ensemble_test < 1)) {
    throw InvalidArgument("config: ensemble sizes too small");
  }
  if (threads < 1) throw InvalidArgument("config: threads must be >= 1");
}

bool ResultRow::operator<(const ResultRow& o) const {
  return std::tie(experiment, width, depth, beta, seed, metric) <
         std::tie(o.experiment, o.width, o.depth, o.beta, o.seed, o.metric);
}

bool PredictionRow::operator<(const PredictionRow& o) const {
  return std::tie(experiment, width, beta, seed, series, index) <
         std::tie(o.experiment, o.width, o.beta, o.seed, o.series, o.index);
}

SplitDataset load_experiment_data(const ExperimentConfig& config) {
  const DataSpec& d = config.data;
  if (d.source == DataSpec::Source::synthetic) {
    return gen_synthetic(d.n_points, d.dim, d.noise_sigma, d.data_seed, d.range_lo, d.range_hi);
  }
  LoadedCsv loaded = load_csv(d.csv_path, d.target_column, d.normalize);
  Dataset all = std::move(loaded.data);
  // Deterministic subsample: order rows by a keyed uniform draw.
  const Eigen::Index n = all.size();
  const Eigen::Index cap = std::min<Eigen::Index>(
      n, static_cast<Eigen::Index>(std::llround(static_cast<double>(d.max_train_rows) / kTrainFraction)));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const CounterRng rng(d.data_seed);
  std::vector<double> keys(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    keys[static_cast<std::size_t>(i)] =
        rng.uniform(Stream::data_split, 0, static_cast<std::uint32_t>(i), 0);
  }
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)];
  });
  Dataset picked;
  picked.x.resize(cap, all.dim());
  picked.y.resize(cap);
  for (Eigen::Index i = 0; i < cap; ++i) {
    picked.x.row(i) = all.x.row(order[static_cast<std::size_t>(i)]);
    picked.y(i) = all.y(order[static_cast<std::size_t>(i)]);
  }
  const Eigen::Index n_train = train_count(cap);
  return {picked.slice(0, n_train), picked.slice(n_train, cap - n_train)};
}

ExperimentResult run_width_sweep(const ExperimentConfig& config) {
  config.validate();
  const SplitDataset split = load_experiment_data(config);
  const Dataset& train = split.train;
  const Matrix& xv = split.validation.x;
  const auto d = static_cast<std::size_t>(train.dim());

  struct Cell {
    std::int64_t width;
    std::int64_t seed;
    double beta;
  };
  std::vector<Cell> grid;
  for (auto w : config.widths)
    for (double b : config.betas)
      for (auto s : config.seeds) grid.push_back({w, s, b});

  std::vector<ExperimentResult> parts(grid.size());
  std::vector<std::function<void()>> cells;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    cells.emplace_back([&, i] {
      const Cell cell = grid[i];
      CellWriter out{{"width_sweep", cell.width, config.arch.depth, cell.beta, cell.seed}, parts[i]};
      const auto start = std::chrono::steady_clock::now();
      try {
        const MlpArchitecture arch = config.arch.build(d, static_cast<std::size_t>(cell.width));
        const ParamVector theta0 = init_params(arch, static_cast<std::uint64_t>(cell.seed));
        const LinearizedState state(arch, theta0, train.x,
                                    LinearizedState::Storage::matrix_free, xv);
        const Vector y_shift = train.y + state.f0_train();
        const EigDecomp eig = sym_eig(state.gram().symmetric());
        const double lambda_max = eig.eigenvalues(eig.eigenvalues.size() - 1);
        const double eta = config.train.eta0.value_or(1.0 / (lambda_max + cell.beta));

        TrainConfig tc = config.train;
        tc.beta = cell.beta;
        tc.eta0 = eta;
        tc.record_jacobian_drift = true;
        const Vector proj = eig.eigenvectors.transpose() * train.y;
        tc.reference_coefficients = [&](double step) {
          Vector f(proj.size());
          for (Eigen::Index k = 0; k < proj.size(); ++k) {
            f(k) = descent_filter(eig.eigenvalues(k) + cell.beta, eta,
                                  static_cast<std::size_t>(std::llround(step))) * proj(k);
          }
          return Vector(eig.eigenvectors * f);
        };
        const ShiftedTrainResult trained =
            shifted_train(arch, theta0, train, PriorMean::zero(), tc);

        const ParamVector theta_lin = lin_params_closed_form(state, y_shift, cell.beta, eta,
                                                             std::numeric_limits<double>::infinity());
        const Vector net_val = trained.predictor.evaluate(xv);
        const GramMatrix k_vx = empirical_ntk(arch, theta0, xv, train.x);
        const Vector zeros_train = Vector::Zero(train.size());
        const Vector zeros_val = Vector::Zero(xv.rows());
        const Vector kr_val =
            posterior_mean(state.gram(), k_vx, train.y, zeros_train, zeros_val, cell.beta);

        const auto& records = trained.train.trace.records;
        double max_traj = 0.0;
        for (const auto& r : records) max_traj = std::max(max_traj, r.reference_distance);
        const double secs = seconds_since(start);
        out.row("param_frobenius_diff", param_frobenius_diff(trained.train.params, theta_lin), secs);
        out.row("function_sup_diff", function_sup_diff(net_val, kr_val), secs);
        out.row("max_trajectory_diff", max_traj, secs);
        out.row("jacobian_drift", records.back().jacobian_drift, secs);
        out.row("dist_from_init", records.back().dist_from_init, secs);
        out.row("steps", static_cast<double>(trained.train.steps), secs);
        out.row("converged", trained.train.converged ? 1.0 : 0.0, secs);
        out.row("network_val_mse", mse(net_val, split.validation.y), secs);
        out.row("kernel_ridge_val_mse", mse(kr_val, split.validation.y), secs);
        out.series("network", net_val);
        out.series("kernel_ridge", kr_val);
        out.series("target", split.validation.y);
      } catch (const Error& e) {
        out.failed(e, seconds_since(start));
      }
    });
  }
  run_cells(cells, config.threads);
  return merge(parts);
}

ExperimentResult run_transfer(const ExperimentConfig& config) {
  config.validate();
  const DataSpec& ds = config.data;
  const std::int64_t max_n2 =
      config.n2_values.empty() ? 0 : *std::max_element(config.n2_values.begin(), config.n2_values.end());
  auto [task1, task2] =
      gen_transfer_tasks(config.n1, max_n2, ds.noise_sigma, ds.data_seed, ds.range_lo, ds.range_hi);
  double (*target2)(double) = &transfer_target_2;
  if (config.identical_tasks) {
    task2 = sample_target(&transfer_target_1, max_n2, ds.range_lo, ds.range_hi, ds.noise_sigma,
                          ds.data_seed, 2);
    target2 = &transfer_target_1;
  }
  const Dataset test = sample_target(target2, config.n_test, ds.range_lo, ds.range_hi, 0.0,
                                     ds.data_seed, 3);
  const std::size_t width = static_cast<std::size_t>(config.arch.width);

  struct Cell {
    std::int64_t seed;
    double beta;
  };
  std::vector<Cell> grid;
  for (double b : config.betas)
    for (auto s : config.seeds) grid.push_back({s, b});

  std::vector<ExperimentResult> parts(grid.size());
  std::vector<std::function<void()>> cells;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    cells.emplace_back([&, i] {
      const Cell cell = grid[i];
      CellWriter out{{"transfer", config.arch.width, config.arch.depth, cell.beta, cell.seed},
                     parts[i]};
      const auto start = std::chrono::steady_clock::now();
      try {
        const MlpArchitecture arch = config.arch.build(1, width);
        TrainConfig tc = config.train;
        tc.beta = cell.beta;
        const auto seed = static_cast<std::uint64_t>(cell.seed);
        const ShiftedTrainResult first =
            shifted_train(arch, init_params(arch, seed), task1, PriorMean::zero(), tc);
        const PriorMean prior = first.predictor.as_prior();
        const ParamVector theta0 = init_params(arch, seed + kSecondTaskSeedOffset);
        out.series("target", test.y);
        for (auto n2 : config.n2_values) {
          const Dataset data2 = task2.slice(0, n2);
          const std::string tag = "@n2=" + std::to_string(n2);
          const Vector vanilla =
              shifted_train(arch, theta0, data2, PriorMean::zero(), tc).predictor.evaluate(test.x);
          const Vector pretrain =
              shifted_train(arch, theta0, data2, prior, tc).predictor.evaluate(test.x);
          const double secs = seconds_since(start);
          out.row("test_mse_vanilla" + tag, mse(vanilla, test.y), secs);
          out.row("test_mse_pretrain" + tag, mse(pretrain, test.y), secs);
          out.series("vanilla" + tag, vanilla);
          out.series("pretrain" + tag, pretrain);
        }
      } catch (const Error& e) {
        out.failed(e, seconds_since(start));
      }
    });
  }
  run_cells(cells, config.threads);
  return merge(parts);
}

ExperimentResult run_ensemble(const ExperimentConfig& config) {
  config.validate();
  const DataSpec& ds = config.data;
  const Eigen::Index n_train = config.ensemble_train;
  const Eigen::Index n_test = config.ensemble_test;
  const SplitDataset raw =
      gen_synthetic(n_train + n_test, ds.dim, ds.noise_sigma, ds.data_seed, ds.range_lo, ds.range_hi);
  Dataset all;
  all.x.resize(n_train + n_test, ds.dim);
  all.y.resize(n_train + n_test);
  all.x << raw.train.x, raw.validation.x;
  all.y << raw.train.y, raw.validation.y;
  const Dataset train = all.slice(0, n_train);
  const Dataset test = all.slice(n_train, n_test);
  const std::size_t width = static_cast<std::size_t>(config.arch.width);
  const auto members = static_cast<std::size_t>(config.ensemble_members);
  const auto base_seed = static_cast<std::uint64_t>(config.seeds.front());

  std::vector<ExperimentResult> parts(config.betas.size());
  std::vector<std::function<void()>> cells;
  for (std::size_t bi = 0; bi < config.betas.size(); ++bi) {
    cells.emplace_back([&, bi] {
      const double beta = config.betas[bi];
      CellWriter out{{"ensemble", config.arch.width, config.arch.depth, beta,
                      static_cast<std::int64_t>(base_seed)},
                     parts[bi]};
      const auto start = std::chrono::steady_clock::now();
      try {
        const MlpArchitecture arch = config.arch.build(static_cast<std::size_t>(ds.dim), width);
        Matrix outputs(static_cast<Eigen::Index>(members), n_test);
        Matrix theta_xx = Matrix::Zero(n_train, n_train);
        Matrix theta_tx = Matrix::Zero(n_test, n_train);
        Matrix k_xx = Matrix::Zero(n_train, n_train);
        Matrix k_tx = Matrix::Zero(n_test, n_train);
        Matrix k_tt = Matrix::Zero(n_test, n_test);
        for (std::size_t m = 0; m < members; ++m) {
          const ParamVector theta0 = init_params(arch, base_seed + m);
          const LinearizedState state(arch, theta0, train.x, LinearizedState::Storage::matrix_free,
                                      test.x);
          const ParamVector converged = lin_params_closed_form(
              state, train.y, beta, 1.0, std::numeric_limits<double>::infinity());
          outputs.row(static_cast<Eigen::Index>(m)) = state.predict(converged, test.x).transpose();
          theta_xx += state.gram().values;
          theta_tx += empirical_ntk(arch, theta0, test.x, train.x).values;
          k_xx += empirical_nngp(arch, theta0, train.x, train.x).values;
          k_tx += empirical_nngp(arch, theta0, test.x, train.x).values;
          k_tt += empirical_nngp(arch, theta0, test.x, test.x).values;
        }
        const double inv = 1.0 / static_cast<double>(members);
        auto gram = [&](const Matrix& sum, KernelKind kind) {
          GramMatrix g;
          g.values = sum * inv;
          g.kind = kind;
          g.width_used = width;
          return g;
        };
        const EnsembleMoments predicted =
            ensemble_moments(gram(theta_tx, KernelKind::ntk), gram(theta_xx, KernelKind::ntk),
                             gram(k_tt, KernelKind::nngp), gram(k_tx, KernelKind::nngp),
                             gram(k_xx, KernelKind::nngp), train.y, beta);
        const Vector mc_mean = outputs.colwise().mean().transpose();
        const Matrix centered = outputs.rowwise() - mc_mean.transpose();
        const Matrix mc_cov = centered.transpose() * centered / static_cast<double>(members - 1);
        const double secs = seconds_since(start);
        for (Eigen::Index i = 0; i < n_test; ++i) {
          const std::string tag = "@" + std::to_string(i);
          const double se = std::sqrt(mc_cov(i, i) * inv);
          const double sigma = predicted.covariance(i, i);
          out.row("mc_mean" + tag, mc_mean(i), secs);
          out.row("predicted_mean" + tag, predicted.mean(i), secs);
          out.row("mean_z" + tag, se > 0.0 ? (mc_mean(i) - predicted.mean(i)) / se : 0.0, secs);
          out.row("mc_var" + tag, mc_cov(i, i), secs);
          out.row("predicted_var" + tag, sigma, secs);
          out.row("var_rel_err" + tag, sigma > 0.0 ? std::abs(mc_cov(i, i) - sigma) / sigma : 0.0,
                  secs);
        }
        out.series("mc_mean", mc_mean);
        out.series("predicted_mean", predicted.mean);
        out.series("mc_var", mc_cov.diagonal());
        out.series("predicted_var", predicted.covariance.diagonal());
      } catch (const Error& e) {
        out.failed(e, seconds_since(start));
      }
    });
  }
  run_cells(cells, config.threads);
  return merge(parts);
}

ExperimentResult run_single_train(const ExperimentConfig& config) {
  config.validate();
  const SplitDataset split = load_experiment_data(config);
  const auto d = static_cast<std::size_t>(split.train.dim());
  struct Cell {
    std::int64_t seed;
    double beta;
  };
  std::vector<Cell> grid;
  for (double b : config.betas)
    for (auto s : config.seeds) grid.push_back({s, b});

  std::vector<ExperimentResult> parts(grid.size());
  std::vector<std::function<void()>> cells;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    cells.emplace_back([&, i] {
      const Cell cell = grid[i];
      CellWriter out{{"single_train", config.arch.width, config.arch.depth, cell.beta, cell.seed},
                     parts[i]};
      const auto start = std::chrono::steady_clock::now();
      try {
        const MlpArchitecture arch = config.arch.build(d, static_cast<std::size_t>(config.arch.width));
        const ParamVector theta0 = init_params(arch, static_cast<std::uint64_t>(cell.seed));
        TrainConfig tc = config.train;
        tc.beta = cell.beta;
        const TrainResult r = arch.parametrization == Parametrization::standard
                                  ? std_train(arch, theta0, split.train, tc)
                                  : gd_train(arch, theta0, split.train, tc);
        const Vector train_pred = forward(arch, r.params, split.train.x);
        const Vector val_pred = forward(arch, r.params, split.validation.x);
        const auto& last = r.trace.records.back();
        const double secs = seconds_since(start);
        out.row("final_loss", last.loss, secs);
        out.row("grad_norm", last.grad_norm, secs);
        out.row("dist_from_init", last.dist_from_init, secs);
        out.row("steps", static_cast<double>(r.steps), secs);
        out.row("converged", r.converged ? 1.0 : 0.0, secs);
        out.row("eta0", r.eta0, secs);
        out.row("train_mse", mse(train_pred, split.train.y), secs);
        out.row("val_mse", mse(val_pred, split.validation.y), secs);
        out.series("network", val_pred);
        out.series("target", split.validation.y);
      } catch (const Error& e) {
        out.failed(e, seconds_since(start));
      }
    });
  }
  run_cells(cells, config.threads);
  return merge(parts);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  switch (config.kind) {
    case ExperimentKind::width_sweep: return run_width_sweep(config);
    case ExperimentKind::transfer: return run_transfer(config);
    case ExperimentKind::ensemble: return run_ensemble(config);
    case ExperimentKind::single_train: return run_single_train(config);
  }
  throw InvalidArgument("unknown experiment kind");
}

}  // namespace ntk
