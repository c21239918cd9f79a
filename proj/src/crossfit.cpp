#include "drate/crossfit.hpp"

#include "drate/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace drate {

std::array<Index, 3> SplitPlan::sizes() const {
  std::array<Index, 3> out{0, 0, 0};
  for (const int a : assignments) ++out[static_cast<std::size_t>(a)];
  return out;
}

std::vector<Index> SplitPlan::rows_of(int split) const {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == split) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

SplitPlan make_split_plan(Index n, std::uint64_t seed, int repeat_index) {
  if (n < 3) {
    throw DataError("a three-way split needs at least 3 rows, got " +
                    std::to_string(n));
  }
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitPlan plan;
  plan.repeat_index = repeat_index;
  plan.assignments.resize(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < order.size(); ++k) {
    plan.assignments[static_cast<std::size_t>(order[k])] = static_cast<int>(k % 3);
  }
  for (int r = 0; r < 3; ++r) {
    plan.rotations[static_cast<std::size_t>(r)] = {r, (r + 1) % 3, (r + 2) % 3};
  }
  return plan;
}

std::pair<double, double> combine_repeats(const std::vector<RepeatResult>& repeats) {
  if (repeats.empty()) throw FitError("no successful cross-fit repeats");
  std::vector<double> psis;
  for (const auto& r : repeats) psis.push_back(r.psi);
  const double psi = median(psis);
  std::vector<double> vars;
  for (const auto& r : repeats) {
    vars.push_back(r.variance + (r.psi - psi) * (r.psi - psi));
  }
  return {psi, median(vars)};
}

SplitPlan repeat_plan(Index n, std::uint64_t seed, int repeat) {
  return make_split_plan(
      n, derive_seed(seed, {static_cast<std::uint64_t>(repeat), 0x5e1}), repeat);
}

RepeatResult run_repeat(const Dataset& data, bool tmle,
                        const NuisanceConfig& config, const SplitPlan& plan,
                        std::uint64_t seed) {
  const double nd = static_cast<double>(data.rows());
  const auto rr = static_cast<std::uint64_t>(plan.repeat_index);
  double psi_sum = 0.0;
  double var_sum = 0.0;
  for (std::size_t k = 0; k < plan.rotations.size(); ++k) {
    const Rotation& rot = plan.rotations[k];
    const Dataset om_data = data.subset(plan.rows_of(rot.om));
    const Dataset ps_data = data.subset(plan.rows_of(rot.ps));
    const Dataset eval = data.subset(plan.rows_of(rot.eval));
    const NuisanceFit nuisance =
        fit_nuisance(ps_data, om_data, config, eval, derive_seed(seed, {rr, k}));
    const AteEstimate est =
        tmle ? estimate_tmle(eval, nuisance) : estimate_aipw(eval, nuisance);
    if (!std::isfinite(est.psi) || !std::isfinite(est.se)) {
      throw FitError("non-finite rotation estimate");
    }
    psi_sum += est.psi;
    var_sum += est.se * est.se * static_cast<double>(eval.rows()) / nd;
  }
  return {psi_sum / 3.0, var_sum / 3.0};
}

AteEstimate dc_estimate(const Dataset& data, EstimatorKind kind,
                        const NuisanceConfig& config, int repeats,
                        std::uint64_t seed) {
  bool tmle = false;
  switch (kind) {
    case EstimatorKind::Aipw:
    case EstimatorKind::DcAipw:
      break;
    case EstimatorKind::Tmle:
    case EstimatorKind::DcTmle:
      tmle = true;
      break;
    default:
      throw ConfigError("double cross-fitting supports AIPW and TMLE only");
  }
  if (repeats < 1) throw ConfigError("cross-fit repeats must be >= 1");
  const Index n = data.rows();

  if (n < 30) {
    throw DataError("cross-fitting needs at least 30 rows, got " +
                    std::to_string(n));
  }

  std::vector<RepeatResult> results;
  std::vector<std::string> errors;
  for (int r = 0; r < repeats; ++r) {
    try {
      results.push_back(run_repeat(data, tmle, config, repeat_plan(n, seed, r), seed));
    } catch (const Error& e) {
      errors.emplace_back(e.what());
    }
  }
  if (2 * static_cast<int>(errors.size()) > repeats) {
    std::string why = "double cross-fit failed in " +
                      std::to_string(errors.size()) + " of " +
                      std::to_string(repeats) + " repeats";
    if (!errors.empty()) why += ": " + errors.front();
    throw FitError(why);
  }
  const auto [psi, variance] = combine_repeats(results);
  AteEstimate est =
      wald_estimate(psi, std::sqrt(variance),
                    tmle ? EstimatorKind::DcTmle : EstimatorKind::DcAipw, n);
  est.diagnostics["repeats_failed"] = static_cast<double>(errors.size());
  return est;
}

}  // namespace drate
