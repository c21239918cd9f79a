// Replicated simulation: draw datasets, run a set of estimators on each,
// and summarize bias, standard error, coverage, MSE, between-replicate
// variance and wall time.
#pragma once

#include "drate/estimators.hpp"
#include "drate/plasmode.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace drate {

/// One estimator with its nuisance learners. `learner` is "glm", a library
/// ("smooth", "nonsmooth", "both") or a single learner name; the same
/// choice is used for the propensity and outcome models.
struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::Aipw;
  std::string learner = "glm";
  int repeats = 5;        // cross-fit repeats
  int folds = 5;          // ensemble cross-validation folds
  IptwOptions iptw;
  int bootstrap_reps = 200;  // g-computation
  double g_lo = 0.01;
  double g_hi = 0.99;
  /// Replaces the built-in estimator when set; `learner` is then only a
  /// label.
  std::function<AteEstimate(const Dataset&, std::uint64_t)> custom;

  /// "kind:learner", e.g. "dc-tmle:smooth".
  std::string label() const;
  void validate() const;
};

/// Parses "kind[:learner]"; kind is ipw, gcomp, aipw, tmle, dc-aipw or
/// dc-tmle and the learner defaults to glm.
EstimatorConfig parse_estimator(const std::string& text);

/// Comma-separated list of parse_estimator entries.
std::vector<EstimatorConfig> parse_estimator_list(const std::string& text);

NuisanceLearner nuisance_learner(const std::string& learner, Task task, int folds);

/// Runs one estimator on observed data.
AteEstimate run_estimator(const Dataset& data, const EstimatorConfig& config,
                          const FormulaSpec& ps_formula,
                          const FormulaSpec& om_formula, std::uint64_t seed);

/// A source of synthetic datasets with a known effect and the models the
/// estimators should use.
struct Simulation {
  std::string name;
  std::function<SyntheticDraw(std::uint64_t)> draw;
  double true_ate = 0.0;
  FormulaSpec ps_formula;
  FormulaSpec om_formula;
};

/// Kang-Schafer draws of size n with main-effect models in W1..W5.
Simulation kang_schafer_simulation(Index n);

/// Plasmode draws from `gen` (n = 0 keeps the source size) against the
/// given truth.
Simulation plasmode_simulation(std::shared_ptr<const PlasmodeGenerator> gen,
                               double true_ate, Index n = 0);

/// Per replicate and estimator outcome.
struct ReplicateRecord {
  int replicate = 0;
  std::string estimator;
  bool failed = false;
  std::string error;
  double psi = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  bool covered = false;
  double seconds = 0.0;
};

struct MetricsSummary {
  std::string estimator;
  double bias_median = 0.0;
  double se_median = 0.0;
  double coverage = 0.0;
  double mse = 0.0;
  /// Population variance (divisor R) of psi across successful replicates.
  double bvar = 0.0;
  double bias_mean = 0.0;
  int n_replicates = 0;
  int failures = 0;
  double time_median = 0.0;
};

struct BenchOptions {
  int replicates = 100;
  std::uint64_t seed = 0;
  int workers = 1;
  /// When false every recorded time is 0 so reports are byte-stable.
  bool timing = true;
  bool progress = false;
};

struct BenchResult {
  std::vector<MetricsSummary> summaries;
  /// Replicate-major, estimators in configuration order.
  std::vector<ReplicateRecord> records;
};

/// Seeds depend only on (seed, replicate, estimator position), so results
/// do not depend on the worker count.
BenchResult run_benchmark(const Simulation& simulation,
                          const std::vector<EstimatorConfig>& estimators,
                          const BenchOptions& options);

/// Aggregates records of one estimator against the true effect.
MetricsSummary summarize(const std::string& estimator,
                         const std::vector<ReplicateRecord>& records,
                         double true_ate);

enum class ReportFormat { Csv, Json };

ReportFormat parse_report_format(const std::string& text);

/// Columns: estimator, bias_x100, se_x100, coverage, mse, bvar, time_s,
/// failures, then the unscaled bias, se, bias_mean and n_replicates.
std::string format_report(const std::vector<MetricsSummary>& summaries,
                          ReportFormat format);
void emit_report(const std::vector<MetricsSummary>& summaries,
                 ReportFormat format, const std::string& path);
std::vector<MetricsSummary> parse_report(const std::string& text,
                                         ReportFormat format);

std::string format_replicates(const std::vector<ReplicateRecord>& records);

}  // namespace drate
