#include "drate/plasmode.hpp"

#include "drate/learners.hpp"
#include "drate/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace drate {

std::array<double, 5> kang_schafer_covariates(Rng& rng) {
  std::normal_distribution<double> z;
  const double w1 = z(rng);
  const double w2 = w1 + 2.0 + 2.0 * z(rng);
  const double w3 = 2.0 + std::abs(2.0 * w2) * z(rng);
  const double w4 = w2 * w2 + 2.0 * w3 + std::abs(w1) * z(rng);
  const double w5 = w3 * w4 + std::abs(w2 - w1) * z(rng);
  return {w1, w2, w3, w4, w5};
}

SyntheticDraw generate_kang_schafer(Index n, std::uint64_t seed) {
  if (n < 50) throw ConfigError("Kang-Schafer draws need n >= 50");
  Rng rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);

  SyntheticDraw draw;
  Dataset& data = draw.dataset;
  data.W.resize(n, 5);
  data.A.resize(n);
  data.Y.resize(n);
  data.covariate_names = {"W1", "W2", "W3", "W4", "W5"};
  draw.y0.resize(n);
  draw.y1.resize(n);

  long redrawn = 0;
  for (Index i = 0; i < n; ++i) {
    std::array<double, 5> w = kang_schafer_covariates(rng);
    while (w[4] <= 0.0) {
      ++redrawn;
      w = kang_schafer_covariates(rng);
    }
    const auto [w1, w2, w3, w4, w5] = w;
    data.W.row(i) << w1, w2, w3, w4, w5;
    const double p = expit(w1 + w2 / 20.0 + w3 / 50.0 + w4 / 200.0 + w5 / 5000.0);
    data.A[i] = u(rng) < p ? 1.0 : 0.0;
    draw.y0[i] = 10.0 * w1 + 0.5 * w2 * w2 + 0.66 * w3 + 0.25 * w4 +
                 0.01 * w3 * w4 + 8.0 * std::log(w5) + 4.0 * z(rng);
    draw.y1[i] = draw.y0[i] + kKangSchaferAte;
    data.Y[i] = data.A[i] == 1.0 ? draw.y1[i] : draw.y0[i];
  }
  draw.true_ate_marginal = kKangSchaferAte;
  draw.diagnostics["redrawn_fraction"] =
      static_cast<double>(redrawn) / static_cast<double>(redrawn + n);
  return draw;
}

namespace {

const std::vector<std::string> kCoreCovariates = {"X1", "X2", "X5", "X18", "X217"};

std::string join_plus(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& s : names) out += (out.empty() ? "" : " + ") + s;
  return out;
}

std::string core_square() { return "(" + join_plus(kCoreCovariates) + ")^2"; }

std::string first_order(const std::vector<int>& indices) {
  std::vector<std::string> names;
  for (const int i : indices) names.push_back("X" + std::to_string(i));
  return join_plus(names);
}

std::vector<int> range_1_to(int k) {
  std::vector<int> out(static_cast<std::size_t>(k));
  std::iota(out.begin(), out.end(), 1);
  return out;
}

std::string canonical_label(const std::string& label) {
  const auto colon = label.find(':');
  if (colon == std::string::npos) return label;
  std::string a = label.substr(0, colon);
  std::string b = label.substr(colon + 1);
  if (b < a) std::swap(a, b);
  return a + ":" + b;
}

struct CoefficientRow {
  const char* term;
  double om;
  double ps;
};

// Scenario A (also the generating model of A.no.int and A.less.1st).
const CoefficientRow kScenarioA[] = {
    {"(Intercept)", -3.66, -0.29}, {"X1", 0.83, -0.61},   {"X2", 0.03, 0.24},
    {"X5", 0.10, 0.06},            {"X18", 0.15, 0.11},   {"X217", 0.29, -1.63},
    {"X3", -0.03, -0.09},          {"X4", -0.00, 0.04},   {"X6", -0.12, -0.42},
    {"X7", 0.01, 0.17},            {"X8", 0.02, -0.06},   {"X9", 0.38, 0.07},
    {"X10", 0.02, 0.22},           {"X11", -0.01, -0.16}, {"X12", 0.00, 0.21},
    {"X13", 0.07, 0.20},           {"X14", 0.03, 0.16},   {"X15", -0.00, -0.35},
    {"X16", 0.34, 0.07},           {"X17", 0.05, 0.17},   {"X19", -0.01, 0.30},
    {"X20", 0.01, -0.07},          {"X21", 0.00, 0.03},   {"X22", 0.01, 0.09},
    {"X23", -0.00, -0.08},         {"X24", -0.00, -0.16}, {"X25", 0.02, 0.15},
    {"X26", -0.01, -0.00},         {"X27", 0.00, 0.00},   {"X28", -0.01, -0.01},
    {"X29", -0.00, 0.01},          {"X30", -0.03, -0.59}, {"X31", 0.00, 0.00},
    {"X32", 0.06, 0.27},           {"X33", 0.04, -0.62},  {"X34", 0.00, -0.01},
    {"X35", 0.01, 0.16},           {"X36", 0.00, -0.00},  {"X37", 0.06, 0.08},
    {"X38", -0.00, 0.00},          {"X39", -0.09, 0.11},  {"X40", 0.52, -0.53},
    {"X1:X2", -0.01, 0.01},        {"X1:X5", -0.18, 0.08}, {"X1:X18", -0.17, -0.13},
    {"X1:X217", 0.03, 0.64},       {"X2:X5", 0.04, 0.14}, {"X2:X18", -0.02, -0.19},
    {"X2:X217", 0.03, -0.00},      {"X5:X18", 0.04, 0.18}, {"X5:X217", -0.06, 0.35},
    {"X18:X217", 0.00, -0.02},
};

const CoefficientRow kScenarioB[] = {
    {"(Intercept)", -3.77, -10.35}, {"X1", 0.89, 0.22},    {"X2", 0.13, 0.67},
    {"X5", 0.06, 0.45},             {"X18", 0.21, 0.62},   {"X217", 0.29, -1.77},
    {"X34", 0.00, -0.00},           {"X27", -0.00, -0.00}, {"X4", -0.01, -0.02},
    {"X31", -0.00, -0.00},          {"X28", -0.01, 0.00},  {"X17", 0.05, 0.21},
    {"X16", 0.34, 0.09},            {"X9", 0.50, 0.68},    {"X7", 0.05, 0.04},
    {"X39", -0.09, -0.01},          {"X1:X2", -0.03, -0.10}, {"X1:X5", -0.19, -0.10},
    {"X1:X18", -0.17, -0.03},       {"X1:X217", 0.04, 0.45}, {"X2:X5", 0.04, 0.11},
    {"X2:X18", -0.01, 0.02},        {"X2:X217", 0.01, 0.12}, {"X5:X18", 0.02, -0.13},
    {"X5:X217", -0.05, 0.43},       {"X18:X217", 0.01, 0.02},
};

// Treatment rows carry no propensity coefficient.
const CoefficientRow kScenarioC[] = {
    {"(Intercept)", 12.49, -4.86}, {"X1", 1.16, 0.38},     {"X2", -0.37, 0.63},
    {"X5", -0.19, 0.64},           {"X18", -0.01, 0.45},   {"X217", 0.64, -1.64},
    {"A:X1", -1.37, 0.0},          {"A:X2", 0.41, 0.0},    {"A:X5", -1.89, 0.0},
    {"A:X18", 0.04, 0.0},          {"A:X217", 1.24, 0.0},  {"X1:X2", -0.08, -0.13},
    {"X1:X5", -0.26, -0.18},       {"X1:X18", -0.19, -0.03}, {"X1:X217", 0.02, 0.45},
    {"X2:X5", 0.27, 0.14},         {"X2:X18", -0.00, 0.03}, {"X2:X217", 0.03, 0.12},
    {"X5:X18", 0.11, -0.06},       {"X5:X217", -0.17, 0.37}, {"X18:X217", 0.08, 0.03},
};

template <std::size_t N>
void load_table(const CoefficientRow (&rows)[N], ScenarioSpec& spec) {
  CoefficientTable om;
  CoefficientTable ps;
  for (const auto& r : rows) {
    const std::string label = canonical_label(r.term);
    om[label] = r.om;
    if (label.rfind("A:", 0) != 0) ps[label] = r.ps;
  }
  spec.om_coefficients = std::move(om);
  spec.ps_coefficients = std::move(ps);
}

}  // namespace

const std::vector<int>& reduced_covariate_set() {
  static const std::vector<int> set = {4, 7, 9, 16, 17, 27, 28, 31, 34, 39};
  return set;
}

std::vector<std::string> scenario_preset_names() {
  return {"A.cor", "A.no.int", "A.less.1st", "B.cor", "B", "C.cor", "C.part", "C.bad"};
}

void ScenarioSpec::validate() const {
  if (!om_formula.treatment || !om_formula.has_term(*om_formula.treatment)) {
    throw ConfigError("scenario '" + name +
                      "': the outcome model must include the treatment main effect");
  }
  if (ps_formula.treatment) {
    throw ConfigError("scenario '" + name +
                      "': the propensity model cannot reference the treatment");
  }
  if (!std::isfinite(true_ate)) throw ConfigError("scenario true ATE must be finite");
  if (!std::isfinite(interaction_inflation) || interaction_inflation <= 0.0) {
    throw ConfigError("interaction inflation must be positive");
  }
  auto check_table = [&](const std::optional<CoefficientTable>& table,
                         const FormulaSpec& formula, const char* which) {
    if (!table) return;
    std::vector<std::string> labels{kInterceptLabel};
    for (const auto& t : formula.terms) labels.push_back(t.label());
    for (const auto& l : labels) {
      if (formula.treatment && l == *formula.treatment) continue;
      if (!table->count(l)) {
        throw ConfigError("scenario '" + name + "': " + which +
                          " coefficient table has no entry for " + l);
      }
    }
    for (const auto& [label, value] : *table) {
      if (std::find(labels.begin(), labels.end(), label) == labels.end()) {
        throw ConfigError("scenario '" + name + "': " + which +
                          " coefficient " + label + " is not a model term");
      }
    }
  };
  check_table(om_coefficients, om_formula, "outcome");
  check_table(ps_coefficients, ps_formula, "propensity");
}

ScenarioSpec scenario_preset(const std::string& name) {
  const std::string full = core_square() + " + " + first_order(range_1_to(40));
  const std::string reduced = core_square() + " + " + first_order(reduced_covariate_set());
  const std::string no_int =
      join_plus(kCoreCovariates) + " + " + first_order(range_1_to(40));
  const std::string c_true = "(A + " + join_plus(kCoreCovariates) + ")^2";

  ScenarioSpec s;
  s.name = name;
  if (name == "A.cor" || name == "A.no.int" || name == "A.less.1st") {
    s.om_formula = parse_formula("A + " + full);
    s.ps_formula = parse_formula(full);
    load_table(kScenarioA, s);
    if (name == "A.cor") {
      s.estimation_om_formula = s.om_formula;
      s.estimation_ps_formula = s.ps_formula;
    } else if (name == "A.no.int") {
      s.estimation_om_formula = parse_formula("A + " + no_int);
      s.estimation_ps_formula = parse_formula(no_int);
    } else {
      s.covariate_subset = reduced_covariate_set();
      s.estimation_om_formula = parse_formula("A + " + reduced);
      s.estimation_ps_formula = parse_formula(reduced);
    }
  } else if (name == "B" || name == "B.cor") {
    s.covariate_subset = reduced_covariate_set();
    s.om_formula = parse_formula("A + " + reduced);
    s.ps_formula = parse_formula(reduced);
    load_table(kScenarioB, s);
    if (name == "B") {
      s.estimation_om_formula = parse_formula("A + " + full);
      s.estimation_ps_formula = parse_formula(full);
    } else {
      s.estimation_om_formula = s.om_formula;
      s.estimation_ps_formula = s.ps_formula;
    }
  } else if (name == "C.cor" || name == "C.part" || name == "C.bad") {
    s.om_formula = parse_formula(c_true);
    s.ps_formula = parse_formula(core_square());
    s.interaction_inflation = 5.0;
    load_table(kScenarioC, s);
    s.estimation_ps_formula = s.ps_formula;
    if (name == "C.cor") {
      s.estimation_om_formula = s.om_formula;
    } else if (name == "C.part") {
      s.estimation_om_formula = parse_formula("A + A:X1 + A:X217 + " + core_square());
    } else {
      s.estimation_om_formula = parse_formula("A + " + core_square());
    }
  } else {
    std::string known;
    for (const auto& n : scenario_preset_names()) known += " " + n;
    throw ConfigError("unknown scenario preset '" + name + "'; known:" + known);
  }
  s.validate();
  return s;
}

double calibrate_intercept(const Vector& eta, double target) {
  if (!(target > 0.0 && target < 1.0)) {
    throw FitError("target prevalence must lie strictly between 0 and 1");
  }
  auto excess = [&](double delta) {
    double total = 0.0;
    for (Index i = 0; i < eta.size(); ++i) total += expit(eta[i] + delta);
    return total / static_cast<double>(eta.size()) - target;
  };
  double lo = -20.0;
  double hi = 20.0;
  if (excess(lo) > 0.0 || excess(hi) < 0.0) {
    throw FitError("propensity intercept calibration: prevalence not bracketed by [-20, 20]");
  }
  // Run to the resolution of double; the mean then matches the target far
  // below 1e-8.
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Vector PlasmodeGenerator::propensity() const {
  return expit((ps_eta_.array() + delta_).matrix());
}

PlasmodeGenerator make_plasmode_generator(const Dataset& source,
                                          const ScenarioSpec& scenario,
                                          const std::optional<Vector>& residuals) {
  scenario.validate();
  source.validate();
  PlasmodeGenerator gen;
  gen.scenario_ = scenario;
  gen.source_ = source;
  const std::string& treatment = *scenario.om_formula.treatment;

  auto coefficients_from = [](const CoefficientTable& table,
                              const std::vector<std::string>& columns) {
    Vector beta = Vector::Zero(static_cast<Index>(columns.size()));
    for (std::size_t j = 0; j < columns.size(); ++j) {
      const auto it = table.find(columns[j]);
      if (it != table.end()) beta[static_cast<Index>(j)] = it->second;
    }
    return beta;
  };

  const DesignMatrix om = build_design(scenario.om_formula, source);
  const FittedLearner om_fit = fit_ols(om, source.Y);
  gen.om_columns_ = om.columns;
  gen.om_beta_ = scenario.om_coefficients
                     ? coefficients_from(*scenario.om_coefficients, om.columns)
                     : *om_fit.coefficients();
  for (std::size_t j = 0; j < om.columns.size(); ++j) {
    const auto& label = om.columns[j];
    const auto jj = static_cast<Index>(j);
    if (label == treatment) {
      gen.om_beta_[jj] = scenario.true_ate;
    } else if (label.rfind(treatment + ":", 0) == 0 ||
               (label.size() > treatment.size() &&
                label.compare(label.size() - treatment.size() - 1, std::string::npos,
                              ":" + treatment) == 0)) {
      gen.om_beta_[jj] *= scenario.interaction_inflation;
    }
  }
  if (residuals) {
    if (residuals->size() == 0) throw DataError("empty residual pool");
    gen.residuals_ = *residuals;
  } else {
    gen.residuals_ = source.Y - om_fit.predict(om.values);
  }

  const DesignMatrix x0 = build_design(scenario.om_formula, source, 0);
  const DesignMatrix x1 = build_design(scenario.om_formula, source, 1);
  gen.mu0_ = x0.values * gen.om_beta_;
  // Non-treatment columns cancel exactly, so without interactions every
  // effect is the treatment coefficient itself.
  gen.tau_ = (x1.values - x0.values) * gen.om_beta_;

  const DesignMatrix ps = build_design(scenario.ps_formula, source);
  gen.ps_columns_ = ps.columns;
  gen.ps_beta_ = scenario.ps_coefficients
                     ? coefficients_from(*scenario.ps_coefficients, ps.columns)
                     : *fit_logistic(ps, source.A).coefficients();
  gen.ps_eta_ = ps.values * gen.ps_beta_;
  gen.prevalence_ = source.treated_fraction();
  gen.delta_ = calibrate_intercept(gen.ps_eta_, gen.prevalence_);
  return gen;
}

SyntheticDraw draw_plasmode(const PlasmodeGenerator& gen, std::uint64_t seed,
                            Index n) {
  const Dataset& src = gen.source();
  const Index m = src.rows();
  if (n <= 0) n = m;
  Rng rng(seed);
  std::uniform_int_distribution<Index> pick_row(0, m - 1);
  std::uniform_int_distribution<Index> pick_residual(0, gen.residuals().size() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vector p = gen.propensity();

  SyntheticDraw draw;
  Dataset& data = draw.dataset;
  data.covariate_names = src.covariate_names;
  data.treatment_name = src.treatment_name;
  data.outcome_name = src.outcome_name;
  data.W.resize(n, src.covariates());
  data.A.resize(n);
  data.Y.resize(n);
  draw.y0.resize(n);
  draw.y1.resize(n);
  Vector tau(n);
  for (Index i = 0; i < n; ++i) {
    const Index row = pick_row(rng);
    data.W.row(i) = src.W.row(row);
    data.A[i] = u(rng) < p[row] ? 1.0 : 0.0;
    const double e = gen.residuals()[pick_residual(rng)];
    draw.y0[i] = gen.baseline()[row] + e;
    draw.y1[i] = draw.y0[i] + gen.effect()[row];
    data.Y[i] = data.A[i] == 1.0 ? draw.y1[i] : draw.y0[i];
    tau[i] = gen.effect()[row];
  }
  draw.true_ate_marginal = running_mean(tau);
  return draw;
}

TrueAte compute_true_ate(const PlasmodeGenerator& gen, int n_sims,
                         std::uint64_t seed) {
  if (n_sims < 2) throw ConfigError("compute_true_ate needs n_sims >= 2");
  const Vector& tau = gen.effect();
  const Index m = tau.size();
  Rng rng(seed);
  std::uniform_int_distribution<Index> pick(0, m - 1);
  Vector means(n_sims);
  std::vector<double> sample(static_cast<std::size_t>(m));
  for (int s = 0; s < n_sims; ++s) {
    for (auto& v : sample) v = tau[pick(rng)];
    means[s] = running_mean(sample.data(), sample.size());
  }
  return {running_mean(means), sample_sd(means) / std::sqrt(static_cast<double>(n_sims))};
}

Dataset generate_surrogate_source(Index n, Index d, std::uint64_t seed) {
  if (d < 41) throw ConfigError("surrogate source needs at least 41 covariates");
  if (n < 50) throw ConfigError("surrogate source needs at least 50 rows");
  Rng rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Weak low-rank structure: five shared factors with small loadings keep
  // background correlations well below 0.7.
  constexpr Index kFactors = 5;
  Matrix F(n, kFactors);
  for (Index j = 0; j < kFactors; ++j) {
    for (Index i = 0; i < n; ++i) F(i, j) = z(rng);
  }
  Matrix W(n, d);
  for (Index j = 0; j < d; ++j) {
    Vector loading(kFactors);
    for (Index k = 0; k < kFactors; ++k) loading[k] = 0.2 * z(rng);
    const double noise_sd = std::sqrt(std::max(0.05, 1.0 - loading.squaredNorm()));
    for (Index i = 0; i < n; ++i) W(i, j) = F.row(i).dot(loading) + noise_sd * z(rng);
  }

  // Planted pairs among columns outside the scenario variables.
  std::vector<Index> pool;
  for (Index j = 40; j < d; ++j) {
    if (j != 216) pool.push_back(j);
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  const auto pairs = std::min<std::size_t>(30, pool.size() / 2);
  for (std::size_t k = 0; k < pairs; ++k) {
    double rho = 0.0;
    if (k < 4) {
      rho = 0.93 + 0.03 * u(rng);
    } else if (k < 13) {
      rho = 0.83 + 0.04 * u(rng);
    } else {
      rho = 0.73 + 0.04 * u(rng);
    }
    const Index a = pool[2 * k];
    const Index b = pool[2 * k + 1];
    const double sa = sample_sd(W.col(a));
    for (Index i = 0; i < n; ++i) {
      W(i, b) = rho * W(i, a) / sa + std::sqrt(1.0 - rho * rho) * z(rng);
    }
  }

  for (Index j = 0; j < d; ++j) {
    const double mean = W.col(j).mean();
    const double sd = sample_sd(W.col(j));
    W.col(j) = ((W.col(j).array() - mean) / sd).matrix();
  }
  // Binary effect modifiers: sex, gestational diabetes, hypertension.
  const std::pair<Index, double> binaries[] = {{1, 0.5}, {4, 0.15}, {17, 0.10}};
  for (const auto& [col, share] : binaries) {
    const double cut = quantile(W.col(col), 1.0 - share);
    for (Index i = 0; i < n; ++i) W(i, col) = W(i, col) > cut ? 1.0 : 0.0;
  }

  Dataset data;
  data.W = std::move(W);
  for (Index j = 0; j < d; ++j) data.covariate_names.push_back("X" + std::to_string(j + 1));
  const Matrix& X = data.W;
  const Index x217 = d >= 217 ? 216 : 39;
  data.A.resize(n);
  data.Y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double eta = -0.9 + 0.5 * X(i, 0) + 0.4 * X(i, 4) + 0.3 * X(i, 8) -
                       0.5 * X(i, x217);
    data.A[i] = u(rng) < expit(eta) ? 1.0 : 0.0;
    data.Y[i] = 3.0 + 0.8 * X(i, 0) + 0.3 * X(i, 1) + 0.5 * X(i, 8) +
                0.4 * X(i, 15) + 0.5 * X(i, 39) + 1.0 * data.A[i] + z(rng);
  }
  return data;
}

std::vector<int> correlation_tail_counts(const Matrix& X,
                                         const std::vector<double>& thresholds) {
  Matrix S = X.rowwise() - X.colwise().mean();
  for (Index j = 0; j < S.cols(); ++j) {
    const double norm = S.col(j).norm();
    if (norm > 0) S.col(j) /= norm;
  }
  const Matrix C = S.transpose() * S;
  std::vector<int> counts(thresholds.size(), 0);
  for (Index a = 0; a < C.rows(); ++a) {
    for (Index b = a + 1; b < C.cols(); ++b) {
      const double r = std::abs(C(a, b));
      for (std::size_t t = 0; t < thresholds.size(); ++t) {
        if (r > thresholds[t]) ++counts[t];
      }
    }
  }
  return counts;
}

}  // namespace drate
