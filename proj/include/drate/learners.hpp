// Regression and binary-probability learners used as nuisance-function
// candidates: least squares, IRLS logistic regression, the lasso, additive
// natural cubic splines, random forests and gradient-boosted trees.
//
// Every learner consumes a DesignMatrix whose first column is normally the
// intercept. Constant columns are ignored by the penalized and tree
// learners. All randomness flows from an explicit seed.
#pragma once

#include "drate/formula.hpp"
#include "drate/types.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace drate {

enum class Task { Regression, BinaryProbability };

enum class LearnerKind {
  Ols,
  LogisticGlm,
  LassoLinear,
  LassoLogistic,
  Spline,
  RandomForest,
  GradientBoostedTrees,
};

std::string to_string(LearnerKind kind);

/// Learner kind plus named numeric settings. Unset settings take the
/// defaults listed in default_hyperparameters().
struct LearnerSpec {
  LearnerKind kind = LearnerKind::Ols;
  std::map<std::string, double> hyperparameters;

  double get(const std::string& name) const;
  /// Throws ConfigError on unknown names or out-of-range values.
  void validate() const;
};

std::map<std::string, double> default_hyperparameters(LearnerKind kind);

/// Maps the configuration names "glm", "lasso", "spline", "rf" and "gbt"
/// to a concrete learner for the given task.
LearnerSpec learner_from_name(const std::string& name, Task task);

inline constexpr double kProbabilityClamp = 1e-6;

struct FitInfo {
  bool converged = true;
  /// Separation or another condition that makes the fit unreliable.
  bool flagged = false;
  bool ridge_fallback = false;
  int iterations = 0;
  /// Lasso penalty actually used (after cross-validation, if any).
  std::optional<double> lambda;
  /// Per-round training loss (boosting only).
  std::vector<double> training_loss;
  std::vector<std::string> warnings;
};

/// Fitted state behind a FittedLearner.
class Model {
 public:
  virtual ~Model() = default;
  virtual Vector predict(const Matrix& X) const = 0;
  /// Linear-index coefficients, one per design column, if the model has
  /// them.
  virtual std::optional<Vector> coefficients() const { return std::nullopt; }
};

/// Immutable after construction; safe to share across threads.
class FittedLearner {
 public:
  FittedLearner(LearnerSpec spec, Task task, std::vector<std::string> columns,
                std::shared_ptr<const Model> model, FitInfo info);

  /// Throws DataError if the columns differ from the training columns.
  Vector predict(const DesignMatrix& X) const;
  /// No label check; X must have the training column layout.
  Vector predict(const Matrix& X) const;

  const LearnerSpec& spec() const { return spec_; }
  Task task() const { return task_; }
  const std::vector<std::string>& training_columns() const { return columns_; }
  const FitInfo& info() const { return info_; }
  std::optional<Vector> coefficients() const { return model_->coefficients(); }

 private:
  LearnerSpec spec_;
  Task task_;
  std::vector<std::string> columns_;
  std::shared_ptr<const Model> model_;
  FitInfo info_;
};

// --- Linear-index building blocks --------------------------------------

struct LinearSolution {
  Vector coefficients;
  bool ridge_fallback = false;
};

/// Least squares through column-pivoted QR. Rank-deficient designs get a
/// 1e-8 ridge on unit-RMS columns instead.
LinearSolution least_squares(const Matrix& X, const Vector& y);

struct LogisticSolution {
  Vector coefficients;
  bool converged = false;
  bool separated = false;
  bool ridge_fallback = false;
  int iterations = 0;
};

/// Maximum-likelihood logistic regression by IRLS. Stops when the largest
/// coefficient change is below `tolerance` or after `max_iterations`.
LogisticSolution logistic_irls(const Matrix& X, const Vector& y,
                               int max_iterations = 100,
                               double tolerance = 1e-8);

/// X^T (y - expit(X beta)).
Vector logistic_gradient(const Matrix& X, const Vector& y, const Vector& beta);

// --- Lasso ---------------------------------------------------------------

/// Columns that vary (the penalized features), their means and population
/// standard deviations.
struct Standardization {
  std::vector<Index> features;
  Vector mean;
  Vector scale;

  static Standardization fit(const Matrix& X);
  Matrix apply(const Matrix& X) const;
};

/// Solution on the standardized scale: intercept plus one coefficient per
/// standardized feature.
struct LassoSolution {
  double intercept = 0.0;
  Vector beta;
  int iterations = 0;
  bool converged = false;
};

/// Coordinate descent for
///   linear:   (1/2n) ||y - b0 - Z beta||^2 + lambda ||beta||_1
///   logistic: -(1/n) loglik(b0, beta)      + lambda ||beta||_1
/// with Z already standardized. `warm` seeds the iteration.
LassoSolution lasso_coordinate_descent(const Matrix& Z, const Vector& y,
                                       Task task, double lambda,
                                       const LassoSolution* warm = nullptr,
                                       double tolerance = 1e-7,
                                       int max_iterations = 100000);

/// max_j |z_j^T (y - ybar)| / n: the smallest penalty that zeroes every
/// feature.
double lasso_lambda_max(const Matrix& Z, const Vector& y);

/// Penalized objective on the standardized scale.
double lasso_objective(const Matrix& Z, const Vector& y, Task task,
                       double lambda, double intercept, const Vector& beta);

// --- Learners ------------------------------------------------------------

FittedLearner fit_ols(const DesignMatrix& X, const Vector& y);
FittedLearner fit_logistic(const DesignMatrix& X, const Vector& y);

/// With no lambda, the penalty is chosen by 5-fold cross-validation over a
/// 50-point log-spaced path from lambda_max down to 1e-3 lambda_max.
FittedLearner fit_lasso(const DesignMatrix& X, const Vector& y, Task task,
                        std::optional<double> lambda = std::nullopt,
                        std::uint64_t seed = 0,
                        const LearnerSpec* spec = nullptr);

/// Additive natural cubic spline regression with boundary knots at the
/// range and interior knots at the quartiles of each continuous column.
FittedLearner fit_spline(const DesignMatrix& X, const Vector& y, Task task);

FittedLearner fit_random_forest(const DesignMatrix& X, const Vector& y,
                                Task task, std::uint64_t seed,
                                const LearnerSpec* spec = nullptr);

FittedLearner fit_gbt(const DesignMatrix& X, const Vector& y, Task task,
                      std::uint64_t seed, const LearnerSpec* spec = nullptr);

/// Dispatches on spec.kind.
FittedLearner fit_learner(const LearnerSpec& spec, const DesignMatrix& X,
                          const Vector& y, Task task, std::uint64_t seed);

/// Natural cubic spline basis (without the constant) for the given knots:
/// x followed by K - 2 truncated-power terms.
Matrix natural_spline_basis(const Vector& x, const std::vector<double>& knots);

/// Stratified (binary y) or plain random fold labels in [0, folds).
std::vector<int> make_folds(const Vector& y, int folds, bool stratified,
                            std::uint64_t seed);

}  // namespace drate
