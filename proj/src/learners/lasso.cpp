#include "drate/learners.hpp"

#include "drate/rng.hpp"
#include "internal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace drate {

Standardization Standardization::fit(const Matrix& X) {
  Standardization st;
  std::vector<double> means;
  std::vector<double> scales;
  for (Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).mean();
    const double sd = std::sqrt((X.col(j).array() - mean).square().mean());
    if (sd > 1e-12 * (1.0 + std::abs(mean))) {
      st.features.push_back(j);
      means.push_back(mean);
      scales.push_back(sd);
    }
  }
  st.mean = Eigen::Map<Vector>(means.data(), static_cast<Index>(means.size()));
  st.scale =
      Eigen::Map<Vector>(scales.data(), static_cast<Index>(scales.size()));
  return st;
}

Matrix Standardization::apply(const Matrix& X) const {
  Matrix Z(X.rows(), static_cast<Index>(features.size()));
  for (Index k = 0; k < Z.cols(); ++k) {
    Z.col(k) = (X.col(features[static_cast<std::size_t>(k)]).array() - mean[k]) /
               scale[k];
  }
  return Z;
}

namespace {

double soft_threshold(double x, double lambda) {
  if (x > lambda) return x - lambda;
  if (x < -lambda) return x + lambda;
  return 0.0;
}

/// Minimizes (1/2n) sum_i w_i (t_i - b0 - z_i beta)^2 + lambda ||beta||_1,
/// keeping `resid` equal to t - b0 - Z beta. Alternates full sweeps with
/// sweeps over the active set.
int weighted_coordinate_descent(const Matrix& Z, const Vector& w,
                                const Vector& /*t*/, double lambda,
                                double& b0, Vector& beta, Vector& resid,
                                double tolerance, int max_sweeps) {
  const Index n = Z.rows();
  const Index q = Z.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double wsum = w.sum();
  Vector curvature(q);
  for (Index j = 0; j < q; ++j) {
    curvature[j] = w.dot(Z.col(j).cwiseAbs2()) * inv_n;
  }

  auto sweep = [&](bool active_only) {
    double max_delta = 0.0;
    const double d0 = w.dot(resid) / wsum;
    if (d0 != 0.0) {
      b0 += d0;
      resid.array() -= d0;
      max_delta = std::abs(d0);
    }
    for (Index j = 0; j < q; ++j) {
      if (active_only && beta[j] == 0.0) continue;
      if (curvature[j] <= 0.0) continue;
      const double grad =
          Z.col(j).cwiseProduct(w).dot(resid) * inv_n + curvature[j] * beta[j];
      const double updated = soft_threshold(grad, lambda) / curvature[j];
      const double delta = updated - beta[j];
      if (delta != 0.0) {
        resid -= delta * Z.col(j);
        beta[j] = updated;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    return max_delta;
  };

  int sweeps = 0;
  while (sweeps < max_sweeps) {
    ++sweeps;
    if (sweep(false) < tolerance) return sweeps;
    while (sweeps < max_sweeps) {
      ++sweeps;
      if (sweep(true) < tolerance) break;
    }
  }
  return -sweeps;
}

}  // namespace

double lasso_lambda_max(const Matrix& Z, const Vector& y) {
  if (Z.cols() == 0) return 0.0;
  const Vector centered = y.array() - y.mean();
  return (Z.transpose() * centered).cwiseAbs().maxCoeff() /
         static_cast<double>(y.size());
}

double lasso_objective(const Matrix& Z, const Vector& y, Task task,
                       double lambda, double intercept, const Vector& beta) {
  const Index n = y.size();
  const Vector eta = (Z * beta).array() + intercept;
  double loss = 0.0;
  if (task == Task::Regression) {
    loss = 0.5 * (y - eta).squaredNorm() / static_cast<double>(n);
  } else {
    for (Index i = 0; i < n; ++i) {
      loss += detail::softplus(eta[i]) - y[i] * eta[i];
    }
    loss /= static_cast<double>(n);
  }
  return loss + lambda * beta.cwiseAbs().sum();
}

LassoSolution lasso_coordinate_descent(const Matrix& Z, const Vector& y,
                                       Task task, double lambda,
                                       const LassoSolution* warm,
                                       double tolerance, int max_iterations) {
  const Index n = y.size();
  const Index q = Z.cols();
  LassoSolution sol;
  sol.beta = warm ? warm->beta : Vector::Zero(q);

  if (task == Task::Regression) {
    sol.intercept = warm ? warm->intercept : y.mean();
    Vector resid = y - Z * sol.beta;
    resid.array() -= sol.intercept;
    const Vector ones = Vector::Ones(n);
    const int sweeps = weighted_coordinate_descent(
        Z, ones, y, lambda, sol.intercept, sol.beta, resid, tolerance,
        max_iterations);
    sol.converged = sweeps > 0;
    sol.iterations = std::abs(sweeps);
    return sol;
  }

  const double ybar = std::clamp(y.mean(), 1e-6, 1.0 - 1e-6);
  sol.intercept = warm ? warm->intercept : logit(ybar);
  double objective =
      lasso_objective(Z, y, task, lambda, sol.intercept, sol.beta);
  constexpr int kMaxOuter = 100;
  for (int outer = 0; outer < kMaxOuter; ++outer) {
    const Vector eta = (Z * sol.beta).array() + sol.intercept;
    const Vector p = expit(eta);
    const Vector w = (p.array() * (1.0 - p.array())).max(1e-5).matrix();
    const Vector work = eta + (y - p).cwiseQuotient(w);

    double b0 = sol.intercept;
    Vector beta = sol.beta;
    Vector resid = work - eta;
    const int sweeps = weighted_coordinate_descent(
        Z, w, work, lambda, b0, beta, resid, tolerance, max_iterations);
    sol.iterations += std::abs(sweeps);

    double next_objective = lasso_objective(Z, y, task, lambda, b0, beta);
    for (int halving = 0; halving < 30 && next_objective > objective + 1e-14;
         ++halving) {
      b0 = 0.5 * (b0 + sol.intercept);
      beta = 0.5 * (beta + sol.beta);
      next_objective = lasso_objective(Z, y, task, lambda, b0, beta);
    }
    const double delta = std::max(std::abs(b0 - sol.intercept),
                                  q > 0 ? (beta - sol.beta).cwiseAbs().maxCoeff()
                                        : 0.0);
    sol.intercept = b0;
    sol.beta = beta;
    objective = next_objective;
    if (delta < tolerance) {
      sol.converged = true;
      break;
    }
  }
  return sol;
}

namespace {

class LassoModel final : public Model {
 public:
  LassoModel(Standardization st, LassoSolution sol, bool logistic,
             Index intercept_col, Index design_cols)
      : st_(std::move(st)),
        sol_(std::move(sol)),
        logistic_(logistic),
        intercept_col_(intercept_col),
        design_cols_(design_cols) {}

  Vector predict(const Matrix& X) const override {
    Vector eta = st_.apply(X) * sol_.beta;
    eta.array() += sol_.intercept;
    if (!logistic_) return eta;
    return expit(eta)
        .cwiseMax(kProbabilityClamp)
        .cwiseMin(1.0 - kProbabilityClamp);
  }

  std::optional<Vector> coefficients() const override {
    if (intercept_col_ < 0) return std::nullopt;
    Vector coef = Vector::Zero(design_cols_);
    double intercept = sol_.intercept;
    for (Index k = 0; k < sol_.beta.size(); ++k) {
      const Index col = st_.features[static_cast<std::size_t>(k)];
      coef[col] = sol_.beta[k] / st_.scale[k];
      intercept -= sol_.beta[k] * st_.mean[k] / st_.scale[k];
    }
    coef[intercept_col_] += intercept;
    return coef;
  }

 private:
  Standardization st_;
  LassoSolution sol_;
  bool logistic_;
  Index intercept_col_;
  Index design_cols_;
};

double prediction_loss(const Vector& y, const Vector& eta, Task task) {
  double loss = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    if (task == Task::Regression) {
      loss += (y[i] - eta[i]) * (y[i] - eta[i]);
    } else {
      loss += detail::softplus(eta[i]) - y[i] * eta[i];
    }
  }
  return loss;
}

std::vector<Index> rows_where(const std::vector<int>& folds, int fold,
                              bool equal) {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    if ((folds[i] == fold) == equal) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

Matrix take_rows(const Matrix& M, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), M.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Index>(r)) = M.row(rows[r]);
  }
  return out;
}

Vector take(const Vector& v, const std::vector<Index>& rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out[static_cast<Index>(r)] = v[rows[r]];
  }
  return out;
}

}  // namespace

FittedLearner fit_lasso(const DesignMatrix& X, const Vector& y, Task task,
                        std::optional<double> lambda, std::uint64_t seed,
                        const LearnerSpec* spec_in) {
  detail::check_inputs(X.values, y);
  detail::check_task_response(y, task);
  if (lambda && !(*lambda >= 0.0)) throw ConfigError("lasso lambda must be >= 0");

  const LearnerKind kind = task == Task::Regression ? LearnerKind::LassoLinear
                                                    : LearnerKind::LassoLogistic;
  LearnerSpec spec = spec_in ? *spec_in : LearnerSpec{kind, {}};
  spec.kind = kind;
  const double tol = spec.get("tol");

  const Standardization st = Standardization::fit(X.values);
  const Matrix Z = st.apply(X.values);
  FitInfo info;
  LassoSolution sol;

  if (lambda) {
    sol = lasso_coordinate_descent(Z, y, task, *lambda, nullptr, tol);
    info.lambda = *lambda;
  } else if (Z.cols() == 0) {
    sol = lasso_coordinate_descent(Z, y, task, 0.0, nullptr, tol);
    info.lambda = 0.0;
  } else {
    const int path_length = static_cast<int>(spec.get("path_length"));
    const double ratio = spec.get("lambda_min_ratio");
    const double lmax = lasso_lambda_max(Z, y);
    std::vector<double> path(static_cast<std::size_t>(path_length));
    for (int k = 0; k < path_length; ++k) {
      path[static_cast<std::size_t>(k)] =
          lmax * std::pow(ratio, static_cast<double>(k) / (path_length - 1));
    }
    const int folds_n = static_cast<int>(spec.get("cv_folds"));
    const auto folds = make_folds(y, folds_n, task == Task::BinaryProbability,
                                  derive_seed(seed, {0x1a550}));
    std::vector<double> cv_loss(path.size(), 0.0);
    for (int f = 0; f < folds_n; ++f) {
      const auto train = rows_where(folds, f, false);
      const auto test = rows_where(folds, f, true);
      const Matrix Ztr = take_rows(Z, train);
      const Vector ytr = take(y, train);
      const Matrix Zte = take_rows(Z, test);
      const Vector yte = take(y, test);
      if (task == Task::BinaryProbability &&
          (ytr.minCoeff() == ytr.maxCoeff())) {
        throw FitError("lasso cross-validation fold has a single class");
      }
      LassoSolution warm;
      for (std::size_t k = 0; k < path.size(); ++k) {
        warm = lasso_coordinate_descent(Ztr, ytr, task, path[k],
                                        k == 0 ? nullptr : &warm, tol);
        Vector eta = Zte * warm.beta;
        eta.array() += warm.intercept;
        cv_loss[k] += prediction_loss(yte, eta, task);
      }
    }
    const auto best = static_cast<std::size_t>(
        std::min_element(cv_loss.begin(), cv_loss.end()) - cv_loss.begin());
    for (std::size_t k = 0; k <= best; ++k) {
      sol = lasso_coordinate_descent(Z, y, task, path[k],
                                     k == 0 ? nullptr : &sol, tol);
    }
    info.lambda = path[best];
  }
  info.converged = sol.converged;
  info.iterations = sol.iterations;
  if (!sol.converged) info.warnings.emplace_back("lasso did not converge");

  const Index icol = detail::intercept_column(X.values);
  return FittedLearner(
      spec, task, X.columns,
      std::make_shared<LassoModel>(st, sol, task == Task::BinaryProbability,
                                   icol, X.cols()),
      std::move(info));
}

}  // namespace drate
