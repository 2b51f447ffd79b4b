#pragma once

// Regression datasets: synthetic generators and a numeric CSV loader.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ntk/linalg.hpp"

namespace ntk {

struct Dataset {
  Matrix x;  // N x d
  Vector y;  // N
  std::optional<Vector> prior_values;  // m(x) when tabulated alongside the data

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }

  /// Rows [begin, begin + count).
  Dataset slice(Eigen::Index begin, Eigen::Index count) const;
};

struct SplitDataset {
  Dataset train;
  Dataset validation;
};

/// Fraction of points kept for training; the rest is validation.
inline constexpr double kTrainFraction = 0.8;

/// Number of training rows when splitting n points.
Eigen::Index train_count(Eigen::Index n);

/// sin(x) + cos(2x) per coordinate, summed and scaled by 1/sqrt(d).
double synthetic_target(const Vector& x);

/// Inputs uniform on [lo, hi]^dim, targets synthetic_target + N(0, sigma^2),
/// split 80/20 into train / validation.
SplitDataset gen_synthetic(Eigen::Index n_points, Eigen::Index dim, double noise_sigma,
                           std::uint64_t seed, double lo = -6.0, double hi = 6.0);

double transfer_target_1(double x);
double transfer_target_2(double x);

/// Two one-dimensional tasks on the same input range sharing the sin(x)
/// component and differing at high frequency.
std::pair<Dataset, Dataset> gen_transfer_tasks(Eigen::Index n1, Eigen::Index n2,
                                               double noise_sigma, std::uint64_t seed,
                                               double lo = -6.0, double hi = 6.0);

/// Noiseless evaluation grid for a one-dimensional target.
Dataset sample_target(double (*target)(double), Eigen::Index n, double lo, double hi,
                      double noise_sigma, std::uint64_t seed, std::uint32_t stream_tag);

/// Affine maps applied by load_csv when normalizing.
struct Normalization {
  Vector feature_mean;
  Vector feature_scale;   // per-column standard deviation (1 for constant columns)
  double row_scale = 1.0;  // divisor making the largest row norm 1
  double target_mean = 0.0;
  double target_scale = 1.0;

  Vector apply_features(const Vector& raw) const;
  double invert_target(double standardized) const;
};

struct LoadedCsv {
  Dataset data;
  std::vector<std::string> feature_names;
  std::optional<Normalization> normalization;
};

/// Reads a headered numeric CSV. `target_column` is a header name or a
/// zero-based column index. With `normalize`, features are standardized per
/// column and then scaled so every row has norm <= 1, and targets are
/// standardized to zero mean and unit variance.
LoadedCsv load_csv(const std::filesystem::path& path, const std::string& target_column,
                   bool normalize);

/// Writes x columns followed by y with 17 significant digits.
void write_csv(const std::filesystem::path& path, const Dataset& data);

}  // namespace ntk
