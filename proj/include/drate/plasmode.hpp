// Synthetic data: the Kang-Schafer "hard" design and plasmode simulation
// over a source covariate sample.
//
// A plasmode generator fits a propensity model and an outcome model to a
// source dataset, fixes the outcome model's treatment coefficient at the
// target effect, recalibrates the propensity intercept so the expected
// treatment prevalence matches the source, and then produces datasets by
// bootstrapping covariate rows, drawing treatment from the calibrated
// propensity and adding resampled outcome residuals.
#pragma once

#include "drate/formula.hpp"
#include "drate/rng.hpp"
#include "drate/types.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace drate {

struct SyntheticDraw {
  Dataset dataset;
  Vector y0;
  Vector y1;
  /// mean(y1 - y0) over this draw's rows.
  double true_ate_marginal = 0.0;
  std::map<std::string, double> diagnostics;
};

/// One covariate row (W1..W5) from the unconditional Kang-Schafer law;
/// W5 may be <= 0.
std::array<double, 5> kang_schafer_covariates(Rng& rng);

/// Kang-Schafer design with sd parameters; rows with W5 <= 0 are redrawn
/// so log(W5) stays finite (diagnostic "redrawn_fraction"). n >= 50.
SyntheticDraw generate_kang_schafer(Index n, std::uint64_t seed);

inline constexpr double kKangSchaferAte = 6.6;

/// Coefficients keyed by term label in canonical form ("(Intercept)", "A",
/// "X1", "X1:X217", "A:X5").
using CoefficientTable = std::map<std::string, double>;

struct ScenarioSpec {
  std::string name;
  /// Data-generating models. The outcome model must contain the treatment.
  FormulaSpec om_formula;
  FormulaSpec ps_formula;
  /// Models handed to the estimators.
  FormulaSpec estimation_om_formula;
  FormulaSpec estimation_ps_formula;
  double true_ate = 6.6;
  /// Multiplier for treatment-by-covariate coefficients.
  double interaction_inflation = 1.0;
  std::vector<int> covariate_subset;
  /// When set, these replace the coefficients fitted on the source.
  std::optional<CoefficientTable> om_coefficients;
  std::optional<CoefficientTable> ps_coefficients;

  /// Throws ConfigError on a malformed scenario.
  void validate() const;
};

/// The ten first-order covariates kept by the reduced scenarios.
const std::vector<int>& reduced_covariate_set();

/// Names accepted by scenario_preset, plasmode scenarios only.
std::vector<std::string> scenario_preset_names();

/// Built-in scenario with its tabulated coefficients. Throws ConfigError
/// for unknown names.
ScenarioSpec scenario_preset(const std::string& name);

/// Coefficients fitted on the source with the plasmode adjustments applied.
class PlasmodeGenerator {
 public:
  const ScenarioSpec& scenario() const { return scenario_; }
  const Dataset& source() const { return source_; }
  /// Outcome coefficients after the treatment override and inflation,
  /// aligned with om_columns().
  const Vector& om_coefficients() const { return om_beta_; }
  const std::vector<std::string>& om_columns() const { return om_columns_; }
  const Vector& ps_coefficients() const { return ps_beta_; }
  const std::vector<std::string>& ps_columns() const { return ps_columns_; }
  /// Intercept shift added to the propensity linear predictor.
  double ps_offset() const { return delta_; }
  double target_prevalence() const { return prevalence_; }
  const Vector& residuals() const { return residuals_; }
  /// Calibrated P(A=1|W) on the source rows.
  Vector propensity() const;
  /// y0 and per-row effect y1 - y0 on the source rows (no noise).
  const Vector& baseline() const { return mu0_; }
  const Vector& effect() const { return tau_; }

 private:
  friend PlasmodeGenerator make_plasmode_generator(
      const Dataset&, const ScenarioSpec&, const std::optional<Vector>&);
  ScenarioSpec scenario_;
  Dataset source_;
  std::vector<std::string> om_columns_;
  std::vector<std::string> ps_columns_;
  Vector om_beta_;
  Vector ps_beta_;
  Vector ps_eta_;
  double delta_ = 0.0;
  double prevalence_ = 0.0;
  Vector residuals_;
  Vector mu0_;
  Vector tau_;
};

/// Fits the scenario's models on `source` and calibrates the propensity.
/// Fitting is deterministic, so no seed is involved. Tabulated scenario
/// coefficients replace the fitted ones, but the noise pool is always the
/// fitted outcome model's residuals unless `residuals` is given.
PlasmodeGenerator make_plasmode_generator(
    const Dataset& source, const ScenarioSpec& scenario,
    const std::optional<Vector>& residuals = std::nullopt);

/// Solves mean(expit(eta + delta)) = target by bisection on [-20, 20].
double calibrate_intercept(const Vector& eta, double target);

/// One plasmode dataset. n = 0 draws as many rows as the source.
SyntheticDraw draw_plasmode(const PlasmodeGenerator& gen, std::uint64_t seed,
                            Index n = 0);

struct TrueAte {
  double value = 0.0;
  /// Monte Carlo standard error of `value`.
  double mc_se = 0.0;
};

/// Mean over n_sims bootstrap samples of the sample-average effect.
TrueAte compute_true_ate(const PlasmodeGenerator& gen, int n_sims = 10000,
                         std::uint64_t seed = 0);

/// Correlated stand-in covariates X1..Xd with a binary source treatment A
/// and outcome Y. X2, X5 and X18 are 0/1; other columns are standardized.
/// Thirty disjoint column pairs carry planted correlations so the |r| tail
/// has roughly 30 pairs above 0.7, 13 above 0.8 and 4 above 0.9.
Dataset generate_surrogate_source(Index n = 1178, Index d = 331,
                                  std::uint64_t seed = 0);

/// Number of column pairs with |correlation| above each threshold.
std::vector<int> correlation_tail_counts(const Matrix& X,
                                         const std::vector<double>& thresholds);

}  // namespace drate
