#include "ntk/outputs.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "ntk/error.hpp"

#ifndef NTK_LAB_VERSION
#define NTK_LAB_VERSION "0.0.0"
#endif

namespace ntk {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_num(const std::string& s, std::size_t row, std::size_t col) {
  double v = 0.0;
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("expected a number, got '" + s + "'", row, col);
  }
  return v;
}

std::int64_t parse_integer(const std::string& s, std::size_t row, std::size_t col) {
  std::int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ParseError("expected an integer, got '" + s + "'", row, col);
  }
  return v;
}

// Splits a CSV body after checking its header; returns rows of cells.
std::vector<std::vector<std::string>> parse_table(const std::string& text, const char* header) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw ParseError(std::string("expected header '") + header + "'", 1, 1);
  }
  const std::size_t columns = split(header).size();
  std::vector<std::vector<std::string>> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != columns) {
      throw ParseError("expected " + std::to_string(columns) + " cells", row, cells.size());
    }
    out.push_back(std::move(cells));
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

const char* library_version() { return NTK_LAB_VERSION; }

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const ResultRow& r : rows) {
    out += r.experiment + "," + std::to_string(r.width) + "," + std::to_string(r.depth) + "," +
           fmt17(r.beta) + "," + std::to_string(r.seed) + "," + r.metric + "," + fmt17(r.value) +
           "," + fmt17(r.seconds) + "\n";
  }
  return out;
}

std::vector<ResultRow> parse_results_csv(const std::string& text) {
  std::vector<ResultRow> rows;
  std::size_t row = 1;
  for (const auto& c : parse_table(text, kResultsHeader)) {
    ++row;
    rows.push_back({c[0], parse_integer(c[1], row, 2), parse_integer(c[2], row, 3),
                    parse_num(c[3], row, 4), parse_integer(c[4], row, 5), c[5],
                    parse_num(c[6], row, 7), parse_num(c[7], row, 8)});
  }
  return rows;
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_results_csv(buf.str());
}

std::string predictions_csv(const std::vector<PredictionRow>& rows) {
  std::string out = std::string(kPredictionsHeader) + "\n";
  for (const PredictionRow& r : rows) {
    out += r.experiment + "," + std::to_string(r.width) + "," + fmt17(r.beta) + "," +
           std::to_string(r.seed) + "," + r.series + "," + std::to_string(r.index) + "," +
           fmt17(r.value) + "\n";
  }
  return out;
}

std::vector<PredictionRow> parse_predictions_csv(const std::string& text) {
  std::vector<PredictionRow> rows;
  std::size_t row = 1;
  for (const auto& c : parse_table(text, kPredictionsHeader)) {
    ++row;
    rows.push_back({c[0], parse_integer(c[1], row, 2), parse_num(c[2], row, 3),
                    parse_integer(c[3], row, 4), c[4], parse_integer(c[5], row, 6),
                    parse_num(c[6], row, 7)});
  }
  return rows;
}

std::string manifest_text(const ExperimentConfig& config) {
  KeyValueConfig kv = config.to_config();
  kv.set("version", library_version());
  const std::string command = config.kind == ExperimentKind::width_sweep    ? "sweep"
                              : config.kind == ExperimentKind::single_train ? "train"
                                                                            : to_string(config.kind);
  return "# ntk-lab run manifest; replay with: ntk-lab " + command +
         " --config <this file>\n" + kv.serialize();
}

std::string plot_script(const std::string& results_path) {
  std::ostringstream s;
  s << "# gnuplot script: width-sweep metrics vs width on log-log axes.\n"
    << "# Points are individual seeds; the line joins per-width means.\n"
    << "results = '" << results_path << "'\n"
    << "set datafile separator ','\n"
    << "set logscale xy\n"
    << "set xlabel 'width'\n"
    << "set key top right\n"
    << "set terminal pngcairo size 900,600\n"
    << "metrics = 'param_frobenius_diff function_sup_diff max_trajectory_diff jacobian_drift'\n"
    << "do for [m in metrics] {\n"
    << "  set output m.'.png'\n"
    << "  set ylabel m\n"
    << "  sel = sprintf(\"< awk -F, '$1==\\\"width_sweep\\\" && $6==\\\"%s\\\" {print $2, $7}' %s\", m, "
       "results)\n"
    << "  plot sel using 1:2 with points pt 7 title 'seeds', \\\n"
    << "       sel using 1:2 smooth unique with linespoints lw 2 title 'mean'\n"
    << "}\n";
  return s.str();
}

OutputFiles emit_outputs(const ExperimentResult& result, const ExperimentConfig& config,
                         const std::filesystem::path& output_dir) {
  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  if (ec) throw IoError("cannot create " + output_dir.string() + ": " + ec.message());
  OutputFiles files{output_dir / "results.csv", output_dir / "predictions.csv",
                    output_dir / "manifest.txt", output_dir / "plot.gp"};
  write_file(files.results, results_csv(result.rows));
  write_file(files.predictions, predictions_csv(result.predictions));
  write_file(files.manifest, manifest_text(config));
  write_file(files.plot, plot_script("results.csv"));
  return files;
}

std::string strip_timing(const std::string& results_text) {
  std::istringstream in(results_text);
  std::string line;
  std::string out;
  while (std::getline(in, line)) {
    const auto comma = line.rfind(',');
    out += (comma == std::string::npos ? line : line.substr(0, comma)) + "\n";
  }
  return out;
}

}  // namespace ntk
