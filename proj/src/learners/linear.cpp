#include "drate/learners.hpp"

#include "drate/rng.hpp"
#include "internal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace drate {

using detail::check_binary;
using detail::check_inputs;
using detail::softplus;

std::string to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::Ols:
      return "ols";
    case LearnerKind::LogisticGlm:
      return "logistic";
    case LearnerKind::LassoLinear:
      return "lasso-linear";
    case LearnerKind::LassoLogistic:
      return "lasso-logistic";
    case LearnerKind::Spline:
      return "spline";
    case LearnerKind::RandomForest:
      return "rf";
    case LearnerKind::GradientBoostedTrees:
      return "gbt";
  }
  return "unknown";
}

std::map<std::string, double> default_hyperparameters(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::Ols:
    case LearnerKind::Spline:
      return {};
    case LearnerKind::LogisticGlm:
      return {{"max_iter", 100}, {"tol", 1e-8}};
    case LearnerKind::LassoLinear:
    case LearnerKind::LassoLogistic:
      // lambda < 0 means "select by cross-validation".
      return {{"lambda", -1.0},
              {"cv_folds", 5},
              {"path_length", 50},
              {"lambda_min_ratio", 1e-3},
              {"tol", 1e-7}};
    case LearnerKind::RandomForest:
      return {{"n_trees", 200}, {"max_depth", 8}, {"min_leaf", 5}, {"mtry", 0}};
    case LearnerKind::GradientBoostedTrees:
      return {{"n_trees", 100},
              {"max_depth", 3},
              {"learning_rate", 0.1},
              {"min_leaf", 5}};
  }
  return {};
}

double LearnerSpec::get(const std::string& name) const {
  if (const auto it = hyperparameters.find(name); it != hyperparameters.end()) {
    return it->second;
  }
  const auto defaults = default_hyperparameters(kind);
  if (const auto it = defaults.find(name); it != defaults.end()) {
    return it->second;
  }
  throw ConfigError("learner " + to_string(kind) + " has no setting '" + name +
                    "'");
}

void LearnerSpec::validate() const {
  const auto defaults = default_hyperparameters(kind);
  for (const auto& [name, value] : hyperparameters) {
    if (!defaults.count(name)) {
      throw ConfigError("learner " + to_string(kind) + " has no setting '" +
                        name + "'");
    }
    if (!std::isfinite(value)) {
      throw ConfigError("setting '" + name + "' is not finite");
    }
  }
  auto require = [&](const char* name, bool ok, const char* range) {
    if (defaults.count(name) && !ok) {
      throw ConfigError(std::string("setting '") + name + "' must be " + range);
    }
  };
  auto has = [&](const char* name) { return defaults.count(name) > 0; };
  if (has("n_trees")) require("n_trees", get("n_trees") >= 1, ">= 1");
  if (has("max_depth")) require("max_depth", get("max_depth") >= 1, ">= 1");
  if (has("min_leaf")) require("min_leaf", get("min_leaf") >= 1, ">= 1");
  if (has("mtry")) require("mtry", get("mtry") >= 0, ">= 0");
  if (has("learning_rate")) {
    const double lr = get("learning_rate");
    require("learning_rate", lr > 0 && lr <= 1, "in (0, 1]");
  }
  if (has("lambda")) {
    const double l = get("lambda");
    require("lambda", l >= 0 || l == -1.0, ">= 0 (or -1 for cross-validation)");
  }
  if (has("cv_folds")) require("cv_folds", get("cv_folds") >= 2, ">= 2");
  if (has("path_length")) require("path_length", get("path_length") >= 2, ">= 2");
  if (has("lambda_min_ratio")) {
    const double r = get("lambda_min_ratio");
    require("lambda_min_ratio", r > 0 && r < 1, "in (0, 1)");
  }
  if (has("tol")) require("tol", get("tol") > 0, "> 0");
  if (has("max_iter")) require("max_iter", get("max_iter") >= 1, ">= 1");
}

LearnerSpec learner_from_name(const std::string& name, Task task) {
  const bool prob = task == Task::BinaryProbability;
  if (name == "glm") {
    return {prob ? LearnerKind::LogisticGlm : LearnerKind::Ols, {}};
  }
  if (name == "lasso") {
    return {prob ? LearnerKind::LassoLogistic : LearnerKind::LassoLinear, {}};
  }
  if (name == "spline") return {LearnerKind::Spline, {}};
  if (name == "rf") return {LearnerKind::RandomForest, {}};
  if (name == "gbt") return {LearnerKind::GradientBoostedTrees, {}};
  throw ConfigError("unknown learner '" + name + "'");
}

FittedLearner::FittedLearner(LearnerSpec spec, Task task,
                             std::vector<std::string> columns,
                             std::shared_ptr<const Model> model, FitInfo info)
    : spec_(std::move(spec)),
      task_(task),
      columns_(std::move(columns)),
      model_(std::move(model)),
      info_(std::move(info)) {}

Vector FittedLearner::predict(const DesignMatrix& X) const {
  if (X.columns != columns_) {
    throw DataError("design columns do not match the training columns");
  }
  return predict(X.values);
}

Vector FittedLearner::predict(const Matrix& X) const {
  if (X.cols() != static_cast<Index>(columns_.size())) {
    throw DataError("design has " + std::to_string(X.cols()) +
                    " columns, learner was trained on " +
                    std::to_string(columns_.size()));
  }
  Vector out = model_->predict(X);
  if (task_ == Task::BinaryProbability) {
    out = out.cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

namespace {

constexpr double kRidge = 1e-8;

LinearSolution ridge_solve(const Matrix& X, const Vector& y) {
  const Index n = X.rows();
  const Index p = X.cols();
  Vector scale = (X.colwise().squaredNorm() / static_cast<double>(n))
                     .cwiseSqrt()
                     .transpose();
  for (Index j = 0; j < p; ++j) {
    if (scale[j] <= 0) scale[j] = 1.0;
  }
  Matrix augmented(n + p, p);
  augmented.topRows(n) = X * scale.cwiseInverse().asDiagonal();
  augmented.bottomRows(p) =
      Matrix::Identity(p, p) * std::sqrt(kRidge * static_cast<double>(n));
  Vector rhs = Vector::Zero(n + p);
  rhs.head(n) = y;
  const Vector b = augmented.householderQr().solve(rhs);
  return {b.cwiseQuotient(scale), true};
}

class LinearModel final : public Model {
 public:
  LinearModel(Vector coef, bool logistic, bool clamp)
      : coef_(std::move(coef)), logistic_(logistic), clamp_(clamp) {}

  Vector predict(const Matrix& X) const override {
    Vector eta = X * coef_;
    if (!logistic_) return eta;
    Vector p = expit(eta);
    if (clamp_) {
      p = p.cwiseMax(kProbabilityClamp).cwiseMin(1.0 - kProbabilityClamp);
    }
    return p;
  }

  std::optional<Vector> coefficients() const override { return coef_; }

 private:
  Vector coef_;
  bool logistic_;
  bool clamp_;
};

double bernoulli_deviance(const Vector& eta, const Vector& y) {
  double dev = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    dev += softplus(eta[i]) - y[i] * eta[i];
  }
  return 2.0 * dev;
}

}  // namespace

LinearSolution least_squares(const Matrix& X, const Vector& y) {
  check_inputs(X, y);
  if (X.rows() >= X.cols()) {
    Eigen::ColPivHouseholderQR<Matrix> qr(X);
    if (qr.rank() == X.cols()) return {qr.solve(y), false};
  }
  return ridge_solve(X, y);
}

Vector logistic_gradient(const Matrix& X, const Vector& y, const Vector& beta) {
  const Vector p = expit(X * beta);
  return X.transpose() * (y - p);
}

LogisticSolution logistic_irls(const Matrix& X, const Vector& y,
                               int max_iterations, double tolerance) {
  check_inputs(X, y);
  check_binary(y);
  const Index n = X.rows();
  const Index p = X.cols();
  Vector sd(p);
  for (Index j = 0; j < p; ++j) {
    const double mean = X.col(j).mean();
    sd[j] = std::sqrt((X.col(j).array() - mean).square().mean());
  }

  LogisticSolution sol;
  sol.coefficients = Vector::Zero(p);
  Vector eta = Vector::Zero(n);
  double dev = bernoulli_deviance(eta, y);
  for (int it = 1; it <= max_iterations; ++it) {
    sol.iterations = it;
    Vector prob = expit(eta);
    Vector w = (prob.array() * (1.0 - prob.array())).max(1e-10).matrix();
    const Vector z = eta + (y - prob).cwiseQuotient(w);
    const Vector sw = w.cwiseSqrt();
    const Matrix Xw = sw.asDiagonal() * X;
    const LinearSolution step = least_squares(Xw, z.cwiseProduct(sw));
    sol.ridge_fallback = sol.ridge_fallback || step.ridge_fallback;

    Vector next = step.coefficients;
    Vector next_eta = X * next;
    double next_dev = bernoulli_deviance(next_eta, y);
    for (int halving = 0;
         halving < 30 && !(next_dev <= dev + 1e-12 * std::abs(dev));
         ++halving) {
      next = 0.5 * (next + sol.coefficients);
      next_eta = X * next;
      next_dev = bernoulli_deviance(next_eta, y);
    }
    const double delta = (next - sol.coefficients).cwiseAbs().maxCoeff();
    sol.coefficients = next;
    eta = next_eta;
    dev = next_dev;

    for (Index j = 0; j < p; ++j) {
      if (sd[j] > 0 && std::abs(sol.coefficients[j]) * sd[j] > 30.0) {
        sol.separated = true;
      }
    }
    if (sol.separated) break;
    if (delta < tolerance) {
      sol.converged = true;
      break;
    }
  }
  return sol;
}

FittedLearner fit_ols(const DesignMatrix& X, const Vector& y) {
  const LinearSolution sol = least_squares(X.values, y);
  FitInfo info;
  info.ridge_fallback = sol.ridge_fallback;
  if (sol.ridge_fallback) {
    info.warnings.emplace_back("rank-deficient design; ridge fallback engaged");
  }
  return FittedLearner({LearnerKind::Ols, {}}, Task::Regression, X.columns,
                       std::make_shared<LinearModel>(sol.coefficients, false,
                                                     false),
                       std::move(info));
}

FittedLearner detail::fit_logistic_with(const DesignMatrix& X, const Vector& y,
                                const LearnerSpec& spec) {
  const LogisticSolution sol =
      logistic_irls(X.values, y, static_cast<int>(spec.get("max_iter")),
                    spec.get("tol"));
  FitInfo info;
  info.converged = sol.converged;
  info.flagged = sol.separated || !sol.converged;
  info.ridge_fallback = sol.ridge_fallback;
  info.iterations = sol.iterations;
  if (sol.separated) {
    info.warnings.emplace_back("separation detected; probabilities clamped");
  } else if (!sol.converged) {
    info.warnings.emplace_back("IRLS did not converge");
  }
  if (sol.ridge_fallback) {
    info.warnings.emplace_back("rank-deficient design; ridge fallback engaged");
  }
  return FittedLearner(spec, Task::BinaryProbability, X.columns,
                       std::make_shared<LinearModel>(sol.coefficients, true,
                                                     info.flagged),
                       std::move(info));
}


FittedLearner fit_logistic(const DesignMatrix& X, const Vector& y) {
  return detail::fit_logistic_with(X, y, {LearnerKind::LogisticGlm, {}});
}

FittedLearner fit_learner(const LearnerSpec& spec, const DesignMatrix& X,
                          const Vector& y, Task task, std::uint64_t seed) {
  spec.validate();
  auto require_task = [&](Task expected) {
    if (task != expected) {
      throw ConfigError("learner " + to_string(spec.kind) +
                        " does not support this task");
    }
  };
  switch (spec.kind) {
    case LearnerKind::Ols:
      require_task(Task::Regression);
      return fit_ols(X, y);
    case LearnerKind::LogisticGlm:
      require_task(Task::BinaryProbability);
      return detail::fit_logistic_with(X, y, spec);
    case LearnerKind::LassoLinear:
    case LearnerKind::LassoLogistic: {
      require_task(spec.kind == LearnerKind::LassoLinear
                       ? Task::Regression
                       : Task::BinaryProbability);
      const double lambda = spec.get("lambda");
      return fit_lasso(X, y, task,
                       lambda < 0 ? std::nullopt : std::optional(lambda), seed,
                       &spec);
    }
    case LearnerKind::Spline:
      return fit_spline(X, y, task);
    case LearnerKind::RandomForest:
      return fit_random_forest(X, y, task, seed, &spec);
    case LearnerKind::GradientBoostedTrees:
      return fit_gbt(X, y, task, seed, &spec);
  }
  throw ConfigError("unknown learner kind");
}

std::vector<int> make_folds(const Vector& y, int folds, bool stratified,
                            std::uint64_t seed) {
  const Index n = y.size();
  if (folds < 2 || folds > n) {
    throw DataError("cannot build " + std::to_string(folds) + " folds from " +
                    std::to_string(n) + " rows");
  }
  Rng rng(seed);
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  auto assign = [&](std::vector<Index> rows, int offset) {
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      labels[static_cast<std::size_t>(rows[k])] =
          static_cast<int>((k + static_cast<std::size_t>(offset)) %
                           static_cast<std::size_t>(folds));
    }
    return static_cast<int>(rows.size() % static_cast<std::size_t>(folds));
  };
  if (stratified) {
    std::vector<Index> zeros;
    std::vector<Index> ones;
    for (Index i = 0; i < n; ++i) (y[i] == 1.0 ? ones : zeros).push_back(i);
    const int offset = assign(std::move(ones), 0);
    assign(std::move(zeros), offset);
  } else {
    std::vector<Index> all(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    assign(std::move(all), 0);
  }
  return labels;
}

}  // namespace drate
