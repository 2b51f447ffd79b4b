// ntk-lab: command-line front end for the experiment harness.

#include <CLI11.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "ntk/config.hpp"
#include "ntk/data.hpp"
#include "ntk/error.hpp"
#include "ntk/experiment.hpp"
#include "ntk/outputs.hpp"

namespace {

namespace fs = std::filesystem;

struct RunOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string widths;
  std::string seeds;
  std::string betas;
  std::string out;
  int threads = 0;
};

void add_run_options(CLI::App* cmd, RunOptions& o, bool sweep) {
  cmd->add_option("--config", o.config_path, "key=value configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", o.overrides, "override a setting, e.g. --set arch.depth=3");
  if (sweep) cmd->add_option("--widths", o.widths, "comma-separated hidden widths");
  cmd->add_option("--seeds", o.seeds, "comma-separated initialization seeds");
  cmd->add_option("--beta", o.betas, "comma-separated beta values");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--threads", o.threads, "worker threads for independent cells");
}

fs::path default_output_root() {
  if (const char* env = std::getenv("NTK_LAB_OUT"); env && *env) return env;
  return "ntk-lab-out";
}

int run(const RunOptions& o, ntk::ExperimentKind kind) {
  ntk::KeyValueConfig kv;
  if (!o.config_path.empty()) kv = ntk::KeyValueConfig::load(o.config_path);
  kv.set("kind", ntk::to_string(kind));
  for (const auto& a : o.overrides) kv.set_assignment(a);
  if (!o.widths.empty()) kv.set("widths", o.widths);
  if (!o.seeds.empty()) kv.set("seeds", o.seeds);
  if (!o.betas.empty()) kv.set("betas", o.betas);
  if (o.threads > 0) kv.set("threads", std::to_string(o.threads));
  ntk::ExperimentConfig config = ntk::ExperimentConfig::from_config(kv);

  fs::path out_dir = o.out.empty() ? config.output_dir : fs::path(o.out);
  if (out_dir.empty()) out_dir = default_output_root() / ntk::to_string(kind);
  config.output_dir = out_dir;

  const ntk::ExperimentResult result = ntk::run_experiment(config);
  const ntk::OutputFiles files = ntk::emit_outputs(result, config, out_dir);
  std::size_t failed = 0;
  for (const auto& r : result.rows) failed += r.metric == "failed";
  std::cout << "wrote " << result.rows.size() << " rows to " << files.results.string() << "\n"
            << "manifest: " << files.manifest.string() << "\n";
  if (failed) std::cout << failed << " cell(s) failed; see messages above\n";
  return failed ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training reallocates the same multi-megabyte buffers every step; keep
  // them in the heap instead of returning them to the kernel each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"ntk-lab: finite-width networks vs their neural tangent kernel limit"};
  app.set_version_flag("--version", std::string(ntk::library_version()));
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a generated dataset as CSV (x columns, then y)");
  std::string gen_kind = "synthetic";
  std::int64_t gen_n = 160;
  std::int64_t gen_dim = 1;
  std::int64_t gen_n2 = 20;
  double gen_noise = 0.1;
  std::uint64_t gen_seed = 0;
  std::string gen_out = "data.csv";
  gen->add_option("--kind", gen_kind, "synthetic | transfer")
      ->check(CLI::IsMember({"synthetic", "transfer"}));
  gen->add_option("--n", gen_n, "number of points (task 1 size for transfer)");
  gen->add_option("--n2", gen_n2, "task 2 size (transfer)");
  gen->add_option("--dim", gen_dim, "input dimension (synthetic)");
  gen->add_option("--noise", gen_noise, "observation noise standard deviation");
  gen->add_option("--seed", gen_seed, "data seed");
  gen->add_option("--out", gen_out, "output CSV path (transfer writes <stem>_task1/2.csv)");

  RunOptions train_o, sweep_o, transfer_o, ensemble_o;
  auto* train = app.add_subcommand("train", "train single networks and report diagnostics");
  add_run_options(train, train_o, false);
  auto* sweep = app.add_subcommand("sweep", "width sweep: network vs linearized optimum");
  add_run_options(sweep, sweep_o, true);
  auto* transfer = app.add_subcommand("transfer", "prior-mean transfer between related tasks");
  add_run_options(transfer, transfer_o, false);
  auto* ensemble = app.add_subcommand("ensemble", "ensemble moments over initializations");
  add_run_options(ensemble, ensemble_o, false);

  auto* plot = app.add_subcommand("plot-script", "print a gnuplot script for a results.csv");
  std::string plot_results;
  std::string plot_out;
  plot->add_option("results", plot_results, "path to results.csv")->required();
  plot->add_option("--out", plot_out, "write the script here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      if (gen_kind == "synthetic") {
        const ntk::SplitDataset d = ntk::gen_synthetic(gen_n, gen_dim, gen_noise, gen_seed);
        ntk::Dataset all;
        all.x.resize(d.train.size() + d.validation.size(), gen_dim);
        all.y.resize(all.x.rows());
        all.x << d.train.x, d.validation.x;
        all.y << d.train.y, d.validation.y;
        ntk::write_csv(gen_out, all);
        std::cout << "wrote " << all.size() << " points to " << gen_out << "\n";
      } else {
        const auto [t1, t2] = ntk::gen_transfer_tasks(gen_n, gen_n2, gen_noise, gen_seed);
        const fs::path base(gen_out);
        const fs::path stem = base.parent_path() / base.stem();
        ntk::write_csv(stem.string() + "_task1.csv", t1);
        ntk::write_csv(stem.string() + "_task2.csv", t2);
        std::cout << "wrote " << t1.size() << " + " << t2.size() << " points to " << stem.string()
                  << "_task{1,2}.csv\n";
      }
      return 0;
    }
    if (*train) return run(train_o, ntk::ExperimentKind::single_train);
    if (*sweep) return run(sweep_o, ntk::ExperimentKind::width_sweep);
    if (*transfer) return run(transfer_o, ntk::ExperimentKind::transfer);
    if (*ensemble) return run(ensemble_o, ntk::ExperimentKind::ensemble);
    if (*plot) {
      ntk::read_results_csv(plot_results);  // validates the file
      const std::string script = ntk::plot_script(plot_results);
      if (plot_out.empty()) {
        std::cout << script;
      } else {
        std::ofstream(plot_out) << script;
      }
      return 0;
    }
  } catch (const ntk::Error& e) {
    std::cerr << "ntk-lab: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
