#include "drate/estimators.hpp"

#include "drate/rng.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace drate {

Vector NuisanceModel::predict(const DesignMatrix& X) const {
  return std::visit([&](const auto& m) { return Vector(m.predict(X)); }, model_);
}

std::vector<std::string> NuisanceModel::warnings() const {
  if (const auto* f = std::get_if<FittedLearner>(&model_)) {
    return f->info().warnings;
  }
  return std::get<FittedEnsemble>(model_).warnings();
}

NuisanceModel fit_nuisance_model(const NuisanceLearner& learner,
                                 const DesignMatrix& X, const Vector& y,
                                 Task task, std::uint64_t seed) {
  if (const auto* spec = std::get_if<LearnerSpec>(&learner)) {
    return NuisanceModel(fit_learner(*spec, X, y, task, seed));
  }
  return NuisanceModel(
      fit_superlearner(std::get<EnsembleSpec>(learner), X, y, task, seed));
}

NuisanceFit bound_propensity(Vector g, Vector m0, Vector m1, double lo,
                             double hi) {
  if (!(lo > 0.0 && lo < hi && hi < 1.0)) {
    throw ConfigError("propensity bounds must satisfy 0 < lo < hi < 1");
  }
  if (g.size() != m0.size() || g.size() != m1.size()) {
    throw DataError("nuisance vectors have different lengths");
  }
  if (!m0.allFinite() || !m1.allFinite() || !g.allFinite()) {
    throw DataError("nuisance predictions contain non-finite values");
  }
  NuisanceFit fit;
  fit.g_lo = lo;
  fit.g_hi = hi;
  for (Index i = 0; i < g.size(); ++i) {
    if (g[i] < lo) {
      g[i] = lo;
      ++fit.clamped_low;
    } else if (g[i] > hi) {
      g[i] = hi;
      ++fit.clamped_high;
    }
  }
  fit.g = std::move(g);
  fit.m0 = std::move(m0);
  fit.m1 = std::move(m1);
  return fit;
}

NuisanceFit fit_nuisance(const Dataset& ps_data, const Dataset& om_data,
                         const NuisanceConfig& config, const Dataset& target,
                         std::uint64_t seed) {
  if (config.ps_formula.treatment) {
    throw ConfigError("propensity formula must not contain the treatment");
  }
  NuisanceModel ps = [&] {
    try {
      return fit_nuisance_model(config.ps_learner,
                                build_design(config.ps_formula, ps_data),
                                ps_data.A, Task::BinaryProbability,
                                derive_seed(seed, {1}));
    } catch (const FitError& e) {
      throw FitError(std::string("propensity model: ") + e.what());
    }
  }();
  NuisanceModel om = [&] {
    try {
      return fit_nuisance_model(config.om_learner,
                                build_design(config.om_formula, om_data),
                                om_data.Y, Task::Regression,
                                derive_seed(seed, {2}));
    } catch (const FitError& e) {
      throw FitError(std::string("outcome model: ") + e.what());
    }
  }();

  Vector g = ps.predict(build_design(config.ps_formula, target));
  Vector m0;
  Vector m1;
  if (config.om_formula.treatment) {
    m0 = om.predict(build_design(config.om_formula, target, 0));
    m1 = om.predict(build_design(config.om_formula, target, 1));
  } else {
    m0 = om.predict(build_design(config.om_formula, target));
    m1 = m0;
  }
  NuisanceFit fit = bound_propensity(std::move(g), std::move(m0), std::move(m1),
                                     config.g_lo, config.g_hi);
  for (auto w : ps.warnings()) fit.warnings.push_back("propensity: " + w);
  for (auto w : om.warnings()) fit.warnings.push_back("outcome: " + w);
  return fit;
}

NuisanceFit fit_nuisance(const Dataset& data, const NuisanceConfig& config,
                         const Dataset& target, std::uint64_t seed) {
  return fit_nuisance(data, data, config, target, seed);
}

namespace {

void check_lengths(const Dataset& data, std::initializer_list<const Vector*> vs) {
  for (const Vector* v : vs) {
    if (v->size() != data.rows()) {
      throw DataError("nuisance vector has " + std::to_string(v->size()) +
                      " entries for " + std::to_string(data.rows()) + " rows");
    }
  }
}

void check_both_arms(const Dataset& data) {
  const double p = data.treated_fraction();
  if (p <= 0.0 || p >= 1.0) {
    throw DataError("sample needs both treated and control units");
  }
}

AteEstimate from_influence(double psi, const Vector& phi, EstimatorKind kind) {
  const auto n = phi.size();
  return wald_estimate(psi, sample_sd(phi) / std::sqrt(static_cast<double>(n)),
                       kind, n);
}

}  // namespace

AteEstimate estimate_iptw(const Dataset& data, const Vector& g,
                          const IptwOptions& options) {
  check_lengths(data, {&g});
  check_both_arms(data);
  if (!(options.truncate_pct >= 0.0 && options.truncate_pct < 0.5)) {
    throw ConfigError("truncation percentile must be in [0, 0.5)");
  }
  if ((g.array() <= 0.0).any() || (g.array() >= 1.0).any()) {
    throw DataError("propensity scores must lie strictly inside (0, 1)");
  }
  const Index n = data.rows();
  const double nd = static_cast<double>(n);
  const double p1 = data.treated_fraction();

  Vector w(n);
  for (Index i = 0; i < n; ++i) {
    w[i] = data.A[i] == 1.0 ? 1.0 / g[i] : 1.0 / (1.0 - g[i]);
    if (options.stabilize) w[i] *= data.A[i] == 1.0 ? p1 : 1.0 - p1;
  }
  AteEstimate est;
  int truncated = 0;
  if (options.truncate_pct > 0.0) {
    const double lo = quantile(w, options.truncate_pct);
    const double hi = quantile(w, 1.0 - options.truncate_pct);
    for (Index i = 0; i < n; ++i) {
      if (w[i] < lo || w[i] > hi) ++truncated;
      w[i] = std::clamp(w[i], lo, hi);
    }
  }
  double s1 = 0.0;
  double s0 = 0.0;
  double w1 = 0.0;
  double w0 = 0.0;
  for (Index i = 0; i < n; ++i) {
    if (data.A[i] == 1.0) {
      s1 += w[i] * data.Y[i];
      w1 += w[i];
    } else {
      s0 += w[i] * data.Y[i];
      w0 += w[i];
    }
  }
  const double d1 = options.stabilize ? w1 : nd;
  const double d0 = options.stabilize ? w0 : nd;
  const double psi = s1 / d1 - s0 / d0;
  const double mu1 = s1 / w1;
  const double mu0 = s0 / w0;
  Vector phi(n);
  for (Index i = 0; i < n; ++i) {
    phi[i] = data.A[i] == 1.0 ? nd * w[i] / d1 * (data.Y[i] - mu1)
                              : -nd * w[i] / d0 * (data.Y[i] - mu0);
  }
  est = from_influence(psi, phi, EstimatorKind::Ipw);
  est.diagnostics["weight_min"] = w.minCoeff();
  est.diagnostics["weight_max"] = w.maxCoeff();
  est.diagnostics["weights_truncated"] = truncated;
  return est;
}

AteEstimate estimate_gcomp(const Dataset& data, const Vector& m0,
                           const Vector& m1, const GcompOptions& options) {
  check_lengths(data, {&m0, &m1});
  if (options.bootstrap_reps < 0) {
    throw ConfigError("bootstrap replicates must be >= 0");
  }
  const Index n = data.rows();
  const Vector diff = m1 - m0;
  const double psi = diff.mean();

  std::vector<double> boot;
  boot.reserve(static_cast<std::size_t>(options.bootstrap_reps));
  int failures = 0;
  std::vector<Index> rows(static_cast<std::size_t>(n));
  for (int b = 0; b < options.bootstrap_reps; ++b) {
    Rng rng(derive_seed(options.seed, {0xb007, static_cast<std::uint64_t>(b)}));
    std::uniform_int_distribution<Index> draw(0, n - 1);
    for (auto& r : rows) r = draw(rng);
    if (!options.refit) {
      double s = 0.0;
      for (const Index r : rows) s += diff[r];
      boot.push_back(s / static_cast<double>(n));
      continue;
    }
    try {
      const auto [b0, b1] =
          options.refit(data.subset(rows), derive_seed(options.seed, {0xb008, static_cast<std::uint64_t>(b)}));
      boot.push_back((b1 - b0).mean());
    } catch (const Error&) {
      ++failures;
    }
  }
  if (options.bootstrap_reps > 0 && boot.size() < 2) {
    throw FitError("g-computation bootstrap produced fewer than two estimates");
  }

  AteEstimate est;
  est.psi = psi;
  est.estimator = EstimatorKind::GComp;
  est.n = n;
  if (boot.empty()) {
    est.ci_lo = est.ci_hi = psi;
  } else {
    const Vector bv = Eigen::Map<Vector>(boot.data(), static_cast<Index>(boot.size()));
    est.se = sample_sd(bv);
    est.ci_lo = std::min(quantile(bv, 0.025), psi);
    est.ci_hi = std::max(quantile(bv, 0.975), psi);
  }
  est.diagnostics["bootstrap_failures"] = failures;
  return est;
}

std::pair<double, Vector> aipw_influence(const Dataset& data,
                                         const NuisanceFit& nuisance) {
  check_lengths(data, {&nuisance.g, &nuisance.m0, &nuisance.m1});
  const Index n = data.rows();
  Vector contribution(n);
  for (Index i = 0; i < n; ++i) {
    const double a = data.A[i];
    const double y = data.Y[i];
    const double g = nuisance.g[i];
    const double treated = a * y / g - (a - g) / g * nuisance.m1[i];
    const double control =
        (1.0 - a) * y / (1.0 - g) + (a - g) / (1.0 - g) * nuisance.m0[i];
    contribution[i] = treated - control;
  }
  const double psi = contribution.mean();
  contribution.array() -= psi;
  return {psi, contribution};
}

AteEstimate estimate_aipw(const Dataset& data, const NuisanceFit& nuisance) {
  const auto [psi, phi] = aipw_influence(data, nuisance);
  AteEstimate est = from_influence(psi, phi, EstimatorKind::Aipw);
  est.diagnostics["g_clamped"] = nuisance.clamped_low + nuisance.clamped_high;
  return est;
}

FluctuationFit fit_fluctuation(const Vector& y_scaled, const Vector& offset,
                               const Vector& clever) {
  FluctuationFit fit;
  fit.clever = clever;
  auto loglik = [&](double eps) {
    double ll = 0.0;
    for (Index i = 0; i < y_scaled.size(); ++i) {
      const double eta = offset[i] + eps * clever[i];
      const double log_p = eta >= 0 ? -std::log1p(std::exp(-eta))
                                     : eta - std::log1p(std::exp(eta));
      const double log_q = log_p - eta;
      ll += y_scaled[i] * log_p + (1.0 - y_scaled[i]) * log_q;
    }
    return ll;
  };

  constexpr int kMaxIterations = 100;
  constexpr double kTolerance = 1e-10;
  double eps = 0.0;
  double ll = loglik(eps);
  fit.converged = false;
  for (int it = 1; it <= kMaxIterations; ++it) {
    fit.iterations = it;
    double score = 0.0;
    double info = 0.0;
    for (Index i = 0; i < y_scaled.size(); ++i) {
      const double p = expit(offset[i] + eps * clever[i]);
      score += clever[i] * (y_scaled[i] - p);
      info += clever[i] * clever[i] * p * (1.0 - p);
    }
    if (score == 0.0) {
      fit.converged = true;
      break;
    }
    if (!(info > 0.0)) break;
    double step = score / info;
    double next_ll = loglik(eps + step);
    for (int halving = 0; halving < 50 && next_ll < ll; ++halving) {
      step *= 0.5;
      next_ll = loglik(eps + step);
    }
    eps += step;
    ll = next_ll;
    if (std::abs(step) < kTolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.epsilon = fit.converged && std::isfinite(eps) ? eps : 0.0;
  if (!std::isfinite(eps)) fit.converged = false;
  return fit;
}

AteEstimate estimate_tmle(const Dataset& data, const NuisanceFit& nuisance,
                          FluctuationFit* fluctuation) {
  check_lengths(data, {&nuisance.g, &nuisance.m0, &nuisance.m1});
  const Index n = data.rows();
  const double y_min = data.Y.minCoeff();
  const double y_max = data.Y.maxCoeff();
  if (!(y_max > y_min)) throw DataError("TMLE needs a non-constant outcome");
  const double range = y_max - y_min;

  auto scale = [&](double v) {
    return std::clamp((v - y_min) / range, kTmleBound, 1.0 - kTmleBound);
  };
  Vector ys(n);
  Vector q0(n);
  Vector q1(n);
  Vector h(n);
  Vector offset(n);
  for (Index i = 0; i < n; ++i) {
    ys[i] = (data.Y[i] - y_min) / range;
    q0[i] = logit(scale(nuisance.m0[i]));
    q1[i] = logit(scale(nuisance.m1[i]));
    const double g = nuisance.g[i];
    h[i] = data.A[i] == 1.0 ? 1.0 / g : -1.0 / (1.0 - g);
    offset[i] = data.A[i] == 1.0 ? q1[i] : q0[i];
  }
  FluctuationFit fit = fit_fluctuation(ys, offset, h);
  fit.y_min = y_min;
  fit.y_max = y_max;

  Vector star0(n);
  Vector star1(n);
  for (Index i = 0; i < n; ++i) {
    const double g = nuisance.g[i];
    star1[i] = expit(q1[i] + fit.epsilon / g);
    star0[i] = expit(q0[i] - fit.epsilon / (1.0 - g));
  }
  const double psi_scaled = (star1 - star0).mean();
  Vector phi(n);
  for (Index i = 0; i < n; ++i) {
    const double star_a = data.A[i] == 1.0 ? star1[i] : star0[i];
    phi[i] = range * (h[i] * (ys[i] - star_a) + star1[i] - star0[i] - psi_scaled);
  }
  AteEstimate est = from_influence(range * psi_scaled, phi, EstimatorKind::Tmle);
  est.diagnostics["epsilon"] = fit.epsilon;
  est.diagnostics["fluctuation_converged"] = fit.converged ? 1.0 : 0.0;
  est.diagnostics["g_clamped"] = nuisance.clamped_low + nuisance.clamped_high;
  if (fluctuation) *fluctuation = std::move(fit);
  return est;
}

}  // namespace drate
