// Command-line driver: estimate on a CSV dataset, materialize simulated
// datasets, or run a benchmark over a preset.
#pragma once

#include "drate/bench.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace drate {

inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
  std::string command;  // estimate, simulate or bench
  std::string data;
  std::string preset;
  std::string treatment = "A";
  std::string outcome = "Y";
  std::string ps_formula;
  std::string om_formula;
  std::string estimators = "aipw";
  int replicates = 100;
  int repeats = 5;
  int folds = 5;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out;
  std::string format = "csv";
  /// Rows per simulated dataset; 0 means 600 for kang-schafer and the
  /// source size for plasmode presets.
  Index n = 0;
  int truth_sims = 10000;
  std::uint64_t source_seed = 0;
  double truncate = 0.05;
  bool stabilize = true;
  double g_lo = 0.01;
  double g_hi = 0.99;
  int bootstrap = 200;
  bool timing = true;
  bool progress = false;
  std::string config;

  void validate() const;
  /// Applied estimator list with the shared options filled in.
  std::vector<EstimatorConfig> estimator_configs() const;
  /// JSON echo of every field.
  std::string to_json() const;
};

/// "kang-schafer" followed by the plasmode scenario presets.
std::vector<std::string> preset_names();

/// Parses arguments (without the program name). Unknown flags are errors.
/// With --config, keys of the JSON file (flag names, optionally nested in
/// sections) override command-line values; each conflict is reported on
/// `warnings`.
RunConfig parse_command_line(const std::vector<std::string>& args, std::ostream& warnings);

/// Simulation for a preset plus the Monte Carlo error of its truth.
struct PresetSimulation {
  Simulation simulation;
  double true_ate_mc_se = 0.0;
  Index n = 0;
};
PresetSimulation make_preset_simulation(const RunConfig& config);

void cmd_estimate(const RunConfig& config, std::ostream& out);
void cmd_simulate(const RunConfig& config, std::ostream& out);
void cmd_bench(const RunConfig& config, std::ostream& out, std::ostream& log);

/// Full entry point. Exit codes: 0 success, 1 runtime failure, 2 usage or
/// configuration error, 3 data error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace drate
