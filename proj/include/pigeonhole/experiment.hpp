#ifndef PIGEONHOLE_EXPERIMENT_HPP
#define PIGEONHOLE_EXPERIMENT_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pigeonhole/data.hpp"
#include "pigeonhole/samplers.hpp"

namespace pigeonhole {

enum class ExperimentMode { SimulateBalanced, SimulateMcar, RealData };

std::string to_string(ExperimentMode mode);

struct SamplerSetup {
  SamplerKind kind = SamplerKind::Psgld;
  SamplerConfig config;
  StepSchedule schedule;
};

/// Real-data source: either a ratings file (plus schema) or a table dump.
struct DataSource {
  std::string ratings_path;
  std::string table_path;
  RatingsSchema schema;
};

struct ExperimentConfig {
  ExperimentMode mode = ExperimentMode::SimulateBalanced;
  GeneratorSpec generator;
  double missing = 0.0;
  DataSource data;
  PriorSpec prior;
  std::vector<SamplerSetup> samplers;
  int replications = 1;
  std::uint64_t seed = 1;
  std::string out_dir = "results";
  int trace_window = 500;
  int grid_size = 1000;
  int threads = 1;
  bool traces = true;
  /// Optional benchmark chain; otherwise the in-run Gibbs chain is used.
  std::string benchmark_path;
};

/// Parse INI text. All defaults are resolved; schema violations raise
/// ConfigError naming the offending section.key.
ExperimentConfig parse_config(const std::string& ini_text);

/// Read, parse and validate a config file.
ExperimentConfig validate_config(const std::string& path);

/// Normalized config as INI text, with step-size orders of magnitude.
std::string describe(const ExperimentConfig& config);

/// FNV-1a hash of describe(config) with the output directory left out, as
/// 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

struct RunOptions {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  /// Zero every wall-clock field so outputs depend on the seed only.
  bool canonical = false;
  std::optional<std::string> benchmark_path;
};

/// Build the table of replication rep (0-based) for the configured mode.
ObservedTable experiment_table(const ExperimentConfig& config, int rep);

/// Run every replication and write chains, summaries, W2 tables,
/// barycenters, traces and a manifest under the output directory. Returns
/// 0 on success and 1 if any replication failed.
int run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

}  // namespace pigeonhole

#endif  // PIGEONHOLE_EXPERIMENT_HPP
