#include "ntk/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ntk/error.hpp"
#include "ntk/random.hpp"

namespace ntk {

Dataset Dataset::slice(Eigen::Index begin, Eigen::Index count) const {
  Dataset out;
  out.x = x.middleRows(begin, count);
  out.y = y.segment(begin, count);
  if (prior_values) out.prior_values = prior_values->segment(begin, count);
  return out;
}

Eigen::Index train_count(Eigen::Index n) {
  return static_cast<Eigen::Index>(std::llround(kTrainFraction * static_cast<double>(n)));
}

double synthetic_target(const Vector& x) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) s += std::sin(x(j)) + std::cos(2.0 * x(j));
  return s / std::sqrt(static_cast<double>(x.size()));
}

SplitDataset gen_synthetic(Eigen::Index n_points, Eigen::Index dim, double noise_sigma,
                           std::uint64_t seed, double lo, double hi) {
  if (n_points < 1 || dim < 1) throw InvalidArgument("gen_synthetic: sizes must be positive");
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("gen_synthetic: noise_sigma must be >= 0");
  const CounterRng rng(seed);
  Dataset all;
  all.x.resize(n_points, dim);
  all.y.resize(n_points);
  for (Eigen::Index i = 0; i < n_points; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) {
      const double u = rng.uniform(Stream::data_input, 0, static_cast<std::uint32_t>(i),
                                   static_cast<std::uint32_t>(j));
      all.x(i, j) = lo + (hi - lo) * u;
    }
    const double eps = rng.normal(Stream::data_noise, 0, static_cast<std::uint32_t>(i), 0);
    all.y(i) = synthetic_target(all.x.row(i).transpose()) + noise_sigma * eps;
  }
  const Eigen::Index n_train = train_count(n_points);
  return {all.slice(0, n_train), all.slice(n_train, n_points - n_train)};
}

double transfer_target_1(double x) {
  return std::sin(x) + 0.5 * std::sin(5.0 * x) + 0.2 * std::sin(20.0 * x);
}

double transfer_target_2(double x) {
  return std::sin(x) + 0.3 * std::cos(7.0 * x) - 0.2 * std::sin(15.0 * x);
}

Dataset sample_target(double (*target)(double), Eigen::Index n, double lo, double hi,
                      double noise_sigma, std::uint64_t seed, std::uint32_t stream_tag) {
  const CounterRng rng(seed);
  Dataset d;
  d.x.resize(n, 1);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::uint32_t>(i);
    const double x = lo + (hi - lo) * rng.uniform(Stream::data_input, stream_tag, idx, 0);
    d.x(i, 0) = x;
    d.y(i) = target(x) + noise_sigma * rng.normal(Stream::data_noise, stream_tag, idx, 0);
  }
  return d;
}

std::pair<Dataset, Dataset> gen_transfer_tasks(Eigen::Index n1, Eigen::Index n2,
                                               double noise_sigma, std::uint64_t seed,
                                               double lo, double hi) {
  if (n1 < 0 || n2 < 0) throw InvalidArgument("gen_transfer_tasks: sizes must be >= 0");
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("gen_transfer_tasks: noise_sigma must be >= 0");
  return {sample_target(&transfer_target_1, n1, lo, hi, noise_sigma, seed, 1),
          sample_target(&transfer_target_2, n2, lo, hi, noise_sigma, seed, 2)};
}

// ---------------------------------------------------------------------------
// CSV

Vector Normalization::apply_features(const Vector& raw) const {
  return ((raw - feature_mean).cwiseQuotient(feature_scale)) / row_scale;
}

double Normalization::invert_target(double standardized) const {
  return standardized * target_scale + target_mean;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last && std::isfinite(out);
}

}  // namespace

LoadedCsv load_csv(const std::filesystem::path& path, const std::string& target_column,
                   bool normalize) {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("load_csv: missing header", 1, 1);
  std::vector<std::string> header = split_line(line);
  for (auto& h : header) h = trim(h);

  std::size_t target = header.size();
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == target_column) target = c;
  }
  if (target == header.size()) {
    std::size_t idx = 0;
    const auto res = std::from_chars(target_column.data(),
                                     target_column.data() + target_column.size(), idx);
    if (res.ec == std::errc() && res.ptr == target_column.data() + target_column.size() &&
        idx < header.size()) {
      target = idx;
    } else {
      throw MissingColumn("load_csv: no column '" + target_column + "' in " + path.string());
    }
  }

  std::vector<std::vector<double>> rows;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("load_csv: expected " + std::to_string(header.size()) + " cells, got " +
                           std::to_string(cells.size()),
                       row_no, std::min(cells.size(), header.size()) + 1);
    }
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_double(cells[c], values[c])) {
        throw ParseError("load_csv: non-numeric cell '" + cells[c] + "'", row_no, c + 1);
      }
    }
    rows.push_back(std::move(values));
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(header.size() - 1);
  LoadedCsv out;
  out.data.x.resize(n, d);
  out.data.y.resize(n);
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != target) out.feature_names.push_back(header[c]);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index j = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == target) {
        out.data.y(i) = rows[static_cast<std::size_t>(i)][c];
      } else {
        out.data.x(i, j++) = rows[static_cast<std::size_t>(i)][c];
      }
    }
  }
  if (!normalize || n == 0) return out;

  Normalization norm;
  norm.feature_mean = out.data.x.colwise().mean().transpose();
  norm.feature_scale.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var =
        (out.data.x.col(j).array() - norm.feature_mean(j)).square().mean();
    norm.feature_scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  Matrix z = (out.data.x.rowwise() - norm.feature_mean.transpose()).array().rowwise() /
             norm.feature_scale.transpose().array();
  const double max_norm = d > 0 ? z.rowwise().norm().maxCoeff() : 0.0;
  norm.row_scale = max_norm > 0.0 ? max_norm : 1.0;
  out.data.x = z / norm.row_scale;

  norm.target_mean = out.data.y.mean();
  const double tvar = (out.data.y.array() - norm.target_mean).square().mean();
  norm.target_scale = tvar > 0.0 ? std::sqrt(tvar) : 1.0;
  out.data.y = (out.data.y.array() - norm.target_mean) / norm.target_scale;
  out.normalization = norm;
  return out;
}

void write_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("write_csv: cannot open " + path.string());
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << "x" << j << ',';
  out << "y\n";
  char buf[32];
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", data.x(i, j));
      out << buf << ',';
    }
    std::snprintf(buf, sizeof buf, "%.17g", data.y(i));
    out << buf << '\n';
  }
  if (!out) throw IoError("write_csv: write failed for " + path.string());
}

}  // namespace ntk
