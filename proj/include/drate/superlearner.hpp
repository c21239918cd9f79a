// Cross-validated convex stacking of candidate learners.
#pragma once

#include "drate/learners.hpp"

#include <string>
#include <vector>

namespace drate {

enum class MetaLoss { SquaredError, LogLoss };

MetaLoss default_loss(Task task);

struct EnsembleSpec {
  std::vector<LearnerSpec> candidates;
  int folds = 5;
  MetaLoss loss = MetaLoss::SquaredError;

  void validate() const;
};

/// Candidate list for a library name: "smooth" (glm, lasso, spline),
/// "nonsmooth" (gbt, rf), "both", or a single learner name.
std::vector<LearnerSpec> library(const std::string& name, Task task);

/// Library plus the loss that matches the task.
EnsembleSpec make_ensemble(const std::string& library_name, Task task,
                           int folds = 5);

/// Mean loss of the combination Z w against y. Log loss clamps the
/// combined probability to [1e-6, 1 - 1e-6].
double meta_risk(const Matrix& Z, const Vector& y, const Vector& w,
                 MetaLoss loss);

/// Euclidean projection onto the probability simplex.
Vector project_to_simplex(const Vector& v);

/// Lawson-Hanson non-negative least squares: min ||Z w - y|| with w >= 0.
Vector nnls(const Matrix& Z, const Vector& y);

/// Weights on the simplex minimizing meta_risk. Squared error starts from
/// the normalized NNLS solution, log loss from uniform weights; both are
/// then refined by projected gradient with step halving. The result is
/// never worse than the best single candidate.
Vector fit_meta_weights(const Matrix& Z, const Vector& y, MetaLoss loss);

class FittedEnsemble {
 public:
  FittedEnsemble(Task task, std::vector<std::string> columns, Vector weights,
                 std::vector<std::optional<FittedLearner>> candidates,
                 Vector cv_risk, Matrix oof, std::vector<std::string> warnings);

  /// Sum of w_j times candidate j's prediction, clamped to [0, 1] for
  /// probability tasks. Throws DataError on a column mismatch.
  Vector predict(const DesignMatrix& X) const;

  Task task() const { return task_; }
  const Vector& weights() const { return weights_; }
  /// Per-candidate cross-validated risk; infinity for failed candidates.
  const Vector& cv_risk() const { return cv_risk_; }
  /// Out-of-fold predictions, one column per candidate (zeros if failed).
  const Matrix& out_of_fold() const { return oof_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  /// Full-data refit of candidate j, absent if it failed.
  const std::optional<FittedLearner>& candidate(std::size_t j) const {
    return candidates_[j];
  }

 private:
  Task task_;
  std::vector<std::string> columns_;
  Vector weights_;
  std::vector<std::optional<FittedLearner>> candidates_;
  Vector cv_risk_;
  Matrix oof_;
  std::vector<std::string> warnings_;
};

/// Throws FitError when every candidate fails and DataError when folds
/// cannot be built.
FittedEnsemble fit_superlearner(const EnsembleSpec& spec, const DesignMatrix& X,
                                const Vector& y, Task task, std::uint64_t seed);

}  // namespace drate
