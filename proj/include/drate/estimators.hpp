// ATE estimators over fitted nuisance functions: inverse probability
// weighting, g-computation, augmented IPW and TMLE.
//
// Notation: g(W) = P(A=1|W) is the propensity score, m_a(W) = E[Y|A=a,W]
// the outcome model at treatment level a.
#pragma once

#include "drate/formula.hpp"
#include "drate/learners.hpp"
#include "drate/superlearner.hpp"
#include "drate/types.hpp"

#include <functional>
#include <utility>
#include <variant>

namespace drate {

using NuisanceLearner = std::variant<LearnerSpec, EnsembleSpec>;

/// A fitted single learner or ensemble behind one predict call.
class NuisanceModel {
 public:
  explicit NuisanceModel(std::variant<FittedLearner, FittedEnsemble> model)
      : model_(std::move(model)) {}
  Vector predict(const DesignMatrix& X) const;
  std::vector<std::string> warnings() const;

 private:
  std::variant<FittedLearner, FittedEnsemble> model_;
};

NuisanceModel fit_nuisance_model(const NuisanceLearner& learner,
                                 const DesignMatrix& X, const Vector& y,
                                 Task task, std::uint64_t seed);

/// Nuisance predictions on a target sample.
struct NuisanceFit {
  Vector g;
  Vector m0;
  Vector m1;
  double g_lo = 0.01;
  double g_hi = 0.99;
  int clamped_low = 0;
  int clamped_high = 0;
  std::vector<std::string> warnings;
};

struct NuisanceConfig {
  FormulaSpec ps_formula;
  FormulaSpec om_formula;
  NuisanceLearner ps_learner = LearnerSpec{LearnerKind::LogisticGlm, {}};
  NuisanceLearner om_learner = LearnerSpec{LearnerKind::Ols, {}};
  double g_lo = 0.01;
  double g_hi = 0.99;
};

/// Clamps g into [lo, hi] and records how many values moved.
NuisanceFit bound_propensity(Vector g, Vector m0, Vector m1, double lo,
                             double hi);

/// PS fitted on `ps_data`, OM fitted on `om_data` (which must contain the
/// treatment), both predicted on `target`. The OM is evaluated with the
/// treatment forced to 0 and to 1.
NuisanceFit fit_nuisance(const Dataset& ps_data, const Dataset& om_data,
                         const NuisanceConfig& config, const Dataset& target,
                         std::uint64_t seed);

/// Single-sample convenience: both models fitted on `data`, predicted on
/// `target`.
NuisanceFit fit_nuisance(const Dataset& data, const NuisanceConfig& config,
                         const Dataset& target, std::uint64_t seed);

struct IptwOptions {
  bool stabilize = true;
  /// Weights are clipped to the [p, 1 - p] empirical quantiles of the
  /// pooled weight vector; 0 disables truncation.
  double truncate_pct = 0.05;
};

/// IPW difference of weighted arm means. Stabilized weights are
/// normalized within each arm (Hajek); unstabilized weights give the
/// Horvitz-Thompson sums divided by n.
AteEstimate estimate_iptw(const Dataset& data, const Vector& g,
                          const IptwOptions& options = {});

/// Refits the outcome model on a bootstrap resample and returns (m0, m1)
/// predicted on that resample.
using OutcomeRefit =
    std::function<std::pair<Vector, Vector>(const Dataset&, std::uint64_t)>;

struct GcompOptions {
  int bootstrap_reps = 200;
  std::uint64_t seed = 0;
  /// Without a refit the bootstrap resamples the fitted m1 - m0 values.
  OutcomeRefit refit;
};

/// psi = mean(m1) - mean(m0); SE is the bootstrap standard deviation and
/// the interval is the 2.5/97.5 percentile interval.
AteEstimate estimate_gcomp(const Dataset& data, const Vector& m0,
                           const Vector& m1, const GcompOptions& options = {});

/// Per-unit AIPW influence contributions (centred at psi) and psi.
std::pair<double, Vector> aipw_influence(const Dataset& data,
                                         const NuisanceFit& nuisance);

AteEstimate estimate_aipw(const Dataset& data, const NuisanceFit& nuisance);

struct FluctuationFit {
  double epsilon = 0.0;
  Vector clever;
  double y_min = 0.0;
  double y_max = 1.0;
  bool converged = true;
  int iterations = 0;
};

/// Scaled-outcome clamp applied to m0/m1 before taking logits.
inline constexpr double kTmleBound = 0.005;

/// Solves sum_i H_i (y_i - expit(offset_i + eps H_i)) = 0 for eps by
/// Newton's method (tolerance 1e-10, at most 100 iterations). On failure
/// eps is 0 and `converged` is false.
FluctuationFit fit_fluctuation(const Vector& y_scaled, const Vector& offset,
                               const Vector& clever);

AteEstimate estimate_tmle(const Dataset& data, const NuisanceFit& nuisance,
                          FluctuationFit* fluctuation = nullptr);

}  // namespace drate
