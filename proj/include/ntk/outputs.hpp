#pragma once

// Result files: results.csv, predictions.csv, the replayable run manifest,
// and a gnuplot script for the log-scale width plots.

#include <filesystem>
#include <string>
#include <vector>

#include "ntk/experiment.hpp"

namespace ntk {

inline constexpr const char* kResultsHeader = "experiment,width,depth,beta,seed,metric,value,seconds";
inline constexpr const char* kPredictionsHeader = "experiment,width,beta,seed,series,index,value";

std::string results_csv(const std::vector<ResultRow>& rows);
/// Throws ParseError on malformed content.
std::vector<ResultRow> parse_results_csv(const std::string& text);
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

std::string predictions_csv(const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> parse_predictions_csv(const std::string& text);

/// Config entries plus the library version, in key=value form accepted back
/// by ExperimentConfig::from_config.
std::string manifest_text(const ExperimentConfig& config);

/// gnuplot script plotting every width-sweep metric against width on log-log
/// axes, reading `results_path`.
std::string plot_script(const std::string& results_path);

struct OutputFiles {
  std::filesystem::path results;
  std::filesystem::path predictions;
  std::filesystem::path manifest;
  std::filesystem::path plot;
};

/// Writes results.csv, predictions.csv, manifest.txt and plot.gp into
/// `output_dir` (created if missing). Throws IoError.
OutputFiles emit_outputs(const ExperimentResult& result, const ExperimentConfig& config,
                         const std::filesystem::path& output_dir);

/// The results text with the wall-clock column blanked, for byte comparisons.
std::string strip_timing(const std::string& results_text);

const char* library_version();

}  // namespace ntk
