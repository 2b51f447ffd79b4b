#pragma once

// Experiment harness: width sweeps of network vs linearization, prior-mean
// transfer between related tasks, and ensemble moments over initializations.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ntk/config.hpp"
#include "ntk/data.hpp"
#include "ntk/net.hpp"
#include "ntk/train.hpp"

namespace ntk {

enum class ExperimentKind { width_sweep, transfer, ensemble, single_train };

std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(const std::string& s);

struct DataSpec {
  enum class Source { synthetic, csv };
  Source source = Source::synthetic;
  // synthetic
  std::int64_t dim = 1;
  std::int64_t n_points = 160;  // 128 train / 32 validation after the split
  double noise_sigma = 0.1;
  double range_lo = -6.0;
  double range_hi = 6.0;
  std::uint64_t data_seed = 0;
  // csv
  std::string csv_path;
  std::string target_column;
  bool normalize = true;
  std::int64_t max_train_rows = 2000;  // subsample cap for CSV data
};

struct ArchSpec {
  std::int64_t depth = 2;
  std::int64_t width = 1024;  // single_train / transfer / ensemble
  Activation activation = Activation::erf;
  Parametrization parametrization = Parametrization::ntk;
  double sigma_w = 1.0;
  double sigma_b = 0.1;
  bool train_first_layer_and_biases = false;

  MlpArchitecture build(std::size_t input_dim, std::size_t width) const;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::width_sweep;
  DataSpec data;
  ArchSpec arch;
  TrainConfig train;
  std::vector<std::int64_t> widths{256, 512, 1024, 2048, 4096};
  std::vector<std::int64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> betas{0.5};
  std::filesystem::path output_dir;
  std::int64_t threads = 1;

  // transfer
  std::int64_t n1 = 200;
  std::vector<std::int64_t> n2_values{0, 5, 10, 20, 50};
  std::int64_t n_test = 500;
  bool identical_tasks = false;

  // ensemble
  std::int64_t ensemble_members = 300;
  std::int64_t ensemble_train = 16;
  std::int64_t ensemble_test = 4;

  /// Throws InvalidArgument on unknown keys or malformed values.
  static ExperimentConfig from_config(const KeyValueConfig& kv);
  /// Every setting as key=value; from_config(to_config()) round-trips.
  KeyValueConfig to_config() const;
  void validate() const;
};

struct ResultRow {
  std::string experiment;
  std::int64_t width = 0;
  std::int64_t depth = 0;
  double beta = 0.0;
  std::int64_t seed = 0;
  std::string metric;
  double value = 0.0;
  double seconds = 0.0;

  /// Ordering key (everything except value and seconds).
  bool operator<(const ResultRow& other) const;
};

/// Persisted per-point values from which metrics can be recomputed.
struct PredictionRow {
  std::string experiment;
  std::int64_t width = 0;
  double beta = 0.0;
  std::int64_t seed = 0;
  std::string series;
  std::int64_t index = 0;
  double value = 0.0;

  bool operator<(const PredictionRow& other) const;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<PredictionRow> predictions;
};

/// Loads or generates the configured dataset split into train / validation.
SplitDataset load_experiment_data(const ExperimentConfig& config);

/// Per (width, seed, beta): trains the zero-prior shifted network and
/// compares it with the linearized optimum from the same initialization.
/// Rows: param_frobenius_diff, function_sup_diff, max_trajectory_diff,
/// jacobian_drift, dist_from_init, steps, converged, kernel_ridge_val_mse,
/// network_val_mse. A failing cell yields a single "failed" row.
ExperimentResult run_width_sweep(const ExperimentConfig& config);

/// Vanilla (zero prior) vs pre-trained prior on task 2 for each n2 and seed.
/// Rows: test_mse_vanilla, test_mse_pretrain (width column = arch width,
/// depth column = depth; the n2 value is encoded in the metric name as
/// "<metric>@n2=<n2>").
ExperimentResult run_transfer(const ExperimentConfig& config);

/// Converged linearized networks over `ensemble_members` seeds compared with
/// the predicted mean and covariance.
ExperimentResult run_ensemble(const ExperimentConfig& config);

/// Single training run at arch.width for each seed and beta.
ExperimentResult run_single_train(const ExperimentConfig& config);

ExperimentResult run_experiment(const ExperimentConfig& config);

}  // namespace ntk
