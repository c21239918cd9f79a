// Double cross-fitting: three random splits take turns fitting the outcome
// model, fitting the propensity model and evaluating the estimator.
#pragma once

#include "drate/estimators.hpp"

#include <array>
#include <utility>

namespace drate {

/// Split labels playing each role in one rotation.
struct Rotation {
  int om = 0;
  int ps = 1;
  int eval = 2;
};

struct SplitPlan {
  std::vector<int> assignments;  // label in {0, 1, 2} per row
  std::array<Rotation, 3> rotations;
  int repeat_index = 0;

  std::array<Index, 3> sizes() const;
  std::vector<Index> rows_of(int split) const;
};

/// Uniformly random partition of n >= 3 rows into thirds (sizes differ by
/// at most one). Rotation r gives the outcome model to split r, the
/// propensity model to split r + 1 and evaluation to split r + 2 (mod 3).
SplitPlan make_split_plan(Index n, std::uint64_t seed, int repeat_index = 0);

/// The plan dc_estimate uses for repeat r under master seed `seed`.
SplitPlan repeat_plan(Index n, std::uint64_t seed, int repeat);

struct RepeatResult {
  double psi = 0.0;
  double variance = 0.0;
};

/// Rotation-mean estimate for one plan. Variance pools the rotation
/// variances rescaled to the full sample: mean_k(se_k^2 n_k / n).
RepeatResult run_repeat(const Dataset& data, bool tmle,
                        const NuisanceConfig& config, const SplitPlan& plan,
                        std::uint64_t seed);

/// Median of the repeat estimates; variance is the median over repeats of
/// var_r + (psi_r - psi_median)^2.
std::pair<double, double> combine_repeats(const std::vector<RepeatResult>& repeats);

/// Doubly cross-fitted AIPW or TMLE. `kind` may be Aipw/DcAipw or
/// Tmle/DcTmle; the result is tagged with the DC kind. Requires n >= 30. A
/// repeat fails if any of its rotations fails; more than half failing is a
/// FitError.
AteEstimate dc_estimate(const Dataset& data, EstimatorKind kind,
                        const NuisanceConfig& config, int repeats,
                        std::uint64_t seed);

}  // namespace drate
