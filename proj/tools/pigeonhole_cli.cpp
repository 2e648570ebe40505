// Command-line front end: simulate, fit, diagnose, validate.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "pigeonhole/chain_io.hpp"
#include "pigeonhole/data.hpp"
#include "pigeonhole/diagnostics.hpp"
#include "pigeonhole/error.hpp"
#include "pigeonhole/experiment.hpp"

namespace fs = std::filesystem;
using namespace pigeonhole;

namespace {

int cmd_validate(const std::string& config_path) {
  const auto config = validate_config(config_path);
  std::cout << "; config_hash = " << config_hash(config) << '\n' << describe(config);
  return 0;
}

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<std::string> out) {
  auto config = validate_config(config_path);
  if (config.mode == ExperimentMode::RealData) throw ConfigError("experiment.mode: simulate needs a simulation mode");
  if (seed) config.seed = *seed;
  const fs::path dir = out.value_or(config.out_dir);
  fs::create_directories(dir);
  for (int rep = 0; rep < config.replications; ++rep) {
    const auto table = experiment_table(config, rep);
    const auto path = dir / ("table_rep" + std::to_string(rep + 1) + ".csv");
    write_table_csv(path.string(), table);
    std::cerr << path.string() << ": R=" << table.R() << " C=" << table.C() << " N=" << table.N() << '\n';
  }
  return 0;
}

int cmd_fit(const std::string& config_path, const RunOptions& options) {
  return run_experiment(validate_config(config_path), options);
}

int cmd_diagnose(const std::vector<std::string>& chains, const std::optional<std::string>& benchmark,
                 const std::string& out, int window, int grid_size, bool canonical) {
  const fs::path dir = out;
  fs::create_directories(dir);
  std::optional<std::vector<MarginalSamples>> reference, trace_bench;
  if (benchmark) {
    const Chain bench = read_chain_csv(*benchmark);
    reference = chain_marginals(bench);
    trace_bench = chain_marginals(bench, 0, static_cast<std::size_t>(window));
  }
  std::vector<std::vector<MarginalSamples>> all;
  std::vector<std::string> names;
  std::ofstream w2_file;
  for (std::size_t k = 0; k < chains.size(); ++k) {
    const Chain chain = read_chain_csv(chains[k]);
    const auto stem = fs::path(chains[k]).stem().string() + "_" + std::to_string(k + 1);
    const auto summary = summarize(chain);
    {
      std::ofstream f(dir / ("summary_" + stem + ".csv"));
      write_summary_csv(f, summary);
    }
    all.push_back(chain_marginals(chain));
    if (names.empty()) names = parameter_names(chain.samples.front().p());
    if (reference) {
      if (!w2_file.is_open()) {
        w2_file.open(dir / "w2.csv");
        w2_file << "chain";
        for (const auto& n : names) w2_file << ',' << n;
        w2_file << '\n';
        w2_file.precision(17);
      }
      w2_file << chains[k];
      for (std::size_t q = 0; q < names.size(); ++q) w2_file << ',' << w2_empirical(all.back()[q], (*reference)[q]);
      w2_file << '\n';
      auto trace = convergence_trace(chain, *trace_bench, window);
      if (canonical)
        for (auto& point : trace) point.elapsed_s = 0.0;
      std::ofstream f(dir / ("trace_" + stem + ".csv"));
      write_trace_csv(f, trace, names);
    }
  }
  if (all.size() > 1) {
    std::ofstream f(dir / "barycenter.csv");
    f << "k";
    for (const auto& n : names) f << ',' << n;
    f << '\n';
    f.precision(17);
    std::vector<MarginalSamples> bary;
    for (std::size_t q = 0; q < names.size(); ++q) {
      std::vector<MarginalSamples> reps;
      for (const auto& m : all) reps.push_back(m[q]);
      bary.push_back(w2_barycenter(reps, grid_size));
    }
    for (int k = 0; k < grid_size; ++k) {
      f << k + 1;
      for (const auto& b : bary) f << ',' << b.values[k];
      f << '\n';
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Subset-based Langevin and Gibbs samplers for crossed mixed effects models"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> benchmark;
  bool canonical = false;
  std::vector<std::string> chains;
  int window = 500;
  int grid_size = 1000;
  std::string diag_out = "diagnostics";

  auto* validate = app.add_subcommand("validate", "Check a config and print it with all defaults resolved");
  validate->add_option("--config", config_path, "Experiment config (INI)")->required()->check(CLI::ExistingFile);

  auto* simulate = app.add_subcommand("simulate", "Generate the synthetic tables of a simulation config");
  simulate->add_option("--config", config_path, "Experiment config (INI)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--seed", seed, "Override experiment.seed");
  simulate->add_option("--out", out, "Output directory");

  auto* fit = app.add_subcommand("fit", "Run every replication and sampler of a config");
  fit->add_option("--config", config_path, "Experiment config (INI)")->required()->check(CLI::ExistingFile);
  fit->add_option("--seed", seed, "Override experiment.seed");
  fit->add_option("--out", out, "Output directory");
  fit->add_flag("--canonical", canonical, "Write zero timestamps so outputs depend on the seed only");
  fit->add_option("--benchmark", benchmark, "Reference chain CSV instead of the in-run Gibbs chain")
      ->check(CLI::ExistingFile);

  auto* diagnose = app.add_subcommand("diagnose", "Summaries, W2 and traces for existing chain files");
  diagnose->add_option("chains", chains, "Chain CSV files")->required()->check(CLI::ExistingFile);
  diagnose->add_option("--benchmark", benchmark, "Reference chain CSV")->check(CLI::ExistingFile);
  diagnose->add_option("--out", diag_out, "Output directory");
  diagnose->add_option("--window", window, "Trailing window of the convergence trace")->check(CLI::PositiveNumber);
  diagnose->add_option("--grid-size", grid_size, "Barycenter grid size")->check(CLI::PositiveNumber);
  diagnose->add_flag("--canonical", canonical, "Write zero timestamps in traces");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors share the config-error status; --help exits 0.
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*validate) return cmd_validate(config_path);
    if (*simulate) return cmd_simulate(config_path, seed, out);
    if (*fit) return cmd_fit(config_path, RunOptions{out, seed, canonical, benchmark});
    if (*diagnose) return cmd_diagnose(chains, benchmark, diag_out, window, grid_size, canonical);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
