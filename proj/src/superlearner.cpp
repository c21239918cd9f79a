#include "drate/superlearner.hpp"

#include "drate/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace drate {

MetaLoss default_loss(Task task) {
  return task == Task::Regression ? MetaLoss::SquaredError : MetaLoss::LogLoss;
}

void EnsembleSpec::validate() const {
  if (candidates.empty()) throw ConfigError("ensemble has no candidates");
  if (folds < 2) throw ConfigError("ensemble needs at least 2 folds");
  for (const auto& c : candidates) c.validate();
}

std::vector<LearnerSpec> library(const std::string& name, Task task) {
  std::vector<std::string> names;
  if (name == "smooth") {
    names = {"glm", "lasso", "spline"};
  } else if (name == "nonsmooth") {
    names = {"gbt", "rf"};
  } else if (name == "both") {
    names = {"glm", "lasso", "spline", "gbt", "rf"};
  } else {
    names = {name};
  }
  std::vector<LearnerSpec> out;
  for (const auto& n : names) out.push_back(learner_from_name(n, task));
  return out;
}

EnsembleSpec make_ensemble(const std::string& library_name, Task task,
                           int folds) {
  EnsembleSpec spec{library(library_name, task), folds, default_loss(task)};
  spec.validate();
  return spec;
}

namespace {

constexpr double kLogLossClamp = 1e-6;

Vector meta_gradient(const Matrix& Z, const Vector& y, const Vector& w,
                     MetaLoss loss) {
  const auto n = static_cast<double>(y.size());
  const Vector pred = Z * w;
  if (loss == MetaLoss::SquaredError) {
    return -2.0 * Z.transpose() * (y - pred) / n;
  }
  Vector dl(y.size());
  for (Index i = 0; i < y.size(); ++i) {
    const double p = std::clamp(pred[i], kLogLossClamp, 1.0 - kLogLossClamp);
    dl[i] = (p - y[i]) / (p * (1.0 - p));
  }
  return Z.transpose() * dl / n;
}

}  // namespace

double meta_risk(const Matrix& Z, const Vector& y, const Vector& w,
                 MetaLoss loss) {
  const Vector pred = Z * w;
  double total = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    if (loss == MetaLoss::SquaredError) {
      total += (y[i] - pred[i]) * (y[i] - pred[i]);
    } else {
      const double p = std::clamp(pred[i], kLogLossClamp, 1.0 - kLogLossClamp);
      total -= y[i] * std::log(p) + (1.0 - y[i]) * std::log1p(-p);
    }
  }
  return total / static_cast<double>(y.size());
}

Vector project_to_simplex(const Vector& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumulative += u[k];
    const double t = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0) theta = t;
  }
  Vector w = (v.array() - theta).max(0.0).matrix();
  const double s = w.sum();
  return s > 0 ? Vector(w / s) : Vector::Constant(v.size(), 1.0 / v.size());
}

Vector nnls(const Matrix& Z, const Vector& y) {
  const Index p = Z.cols();
  Vector w = Vector::Zero(p);
  std::vector<bool> passive(static_cast<std::size_t>(p), false);
  const double tol = 1e-12 * (1.0 + Z.cwiseAbs().maxCoeff() * y.cwiseAbs().maxCoeff());

  auto solve_passive = [&]() {
    std::vector<Index> idx;
    for (Index j = 0; j < p; ++j) {
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    }
    Vector s = Vector::Zero(p);
    if (idx.empty()) return s;
    const Matrix Zp = Z(Eigen::all, idx);
    const Vector sp = Zp.colPivHouseholderQr().solve(y);
    for (std::size_t k = 0; k < idx.size(); ++k) s[idx[k]] = sp[static_cast<Index>(k)];
    return s;
  };

  for (int outer = 0; outer < 3 * static_cast<int>(p) + 10; ++outer) {
    const Vector grad = Z.transpose() * (y - Z * w);
    Index best = -1;
    for (Index j = 0; j < p; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && grad[j] > tol &&
          (best < 0 || grad[j] > grad[best])) {
        best = j;
      }
    }
    if (best < 0) break;
    passive[static_cast<std::size_t>(best)] = true;
    for (int inner = 0; inner < 3 * static_cast<int>(p) + 10; ++inner) {
      const Vector s = solve_passive();
      bool feasible = true;
      double alpha = 1.0;
      for (Index j = 0; j < p; ++j) {
        if (passive[static_cast<std::size_t>(j)] && s[j] <= 0.0) {
          feasible = false;
          const double denom = w[j] - s[j];
          if (denom > 0) alpha = std::min(alpha, w[j] / denom);
        }
      }
      if (feasible) {
        w = s;
        break;
      }
      w += alpha * (s - w);
      for (Index j = 0; j < p; ++j) {
        if (passive[static_cast<std::size_t>(j)] && w[j] <= 1e-15) {
          passive[static_cast<std::size_t>(j)] = false;
          w[j] = 0.0;
        }
      }
    }
  }
  return w;
}

Vector fit_meta_weights(const Matrix& Z, const Vector& y, MetaLoss loss) {
  const Index p = Z.cols();
  if (p == 0) throw FitError("no candidates to combine");
  if (p == 1) return Vector::Ones(1);

  Vector w = Vector::Constant(p, 1.0 / static_cast<double>(p));
  if (loss == MetaLoss::SquaredError) {
    const Vector raw = nnls(Z, y);
    if (raw.sum() > 0) w = raw / raw.sum();
  }

  constexpr int kMaxIterations = 500;
  constexpr double kTolerance = 1e-8;
  double risk = meta_risk(Z, y, w, loss);
  double step = 1.0;
  for (int it = 0; it < kMaxIterations; ++it) {
    const Vector grad = meta_gradient(Z, y, w, loss);
    Vector next;
    double next_risk = risk;
    bool improved = false;
    for (int halving = 0; halving < 60; ++halving) {
      next = project_to_simplex(w - step * grad);
      next_risk = meta_risk(Z, y, next, loss);
      if (next_risk <= risk) {
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) break;
    const double change = (next - w).cwiseAbs().maxCoeff();
    const double gain = risk - next_risk;
    w = next;
    risk = next_risk;
    if (change < kTolerance || gain < kTolerance * kTolerance) break;
    step *= 2.0;
  }

  // Vertex guard: a single candidate can only replace the combination if it
  // is strictly better, which keeps the ensemble at least as good as any
  // candidate on Z.
  for (Index j = 0; j < p; ++j) {
    const Vector e = Vector::Unit(p, j);
    const double r = meta_risk(Z, y, e, loss);
    if (r < risk) {
      risk = r;
      w = e;
    }
  }
  return w;
}

FittedEnsemble::FittedEnsemble(Task task, std::vector<std::string> columns,
                               Vector weights,
                               std::vector<std::optional<FittedLearner>> candidates,
                               Vector cv_risk, Matrix oof,
                               std::vector<std::string> warnings)
    : task_(task),
      columns_(std::move(columns)),
      weights_(std::move(weights)),
      candidates_(std::move(candidates)),
      cv_risk_(std::move(cv_risk)),
      oof_(std::move(oof)),
      warnings_(std::move(warnings)) {}

Vector FittedEnsemble::predict(const DesignMatrix& X) const {
  if (X.columns != columns_) {
    throw DataError("design columns do not match the ensemble's training columns");
  }
  Vector out = Vector::Zero(X.rows());
  for (std::size_t j = 0; j < candidates_.size(); ++j) {
    const double w = weights_[static_cast<Index>(j)];
    if (w == 0.0 || !candidates_[j]) continue;
    out += w * candidates_[j]->predict(X.values);
  }
  if (task_ == Task::BinaryProbability) out = out.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

FittedEnsemble fit_superlearner(const EnsembleSpec& spec, const DesignMatrix& X,
                                const Vector& y, Task task,
                                std::uint64_t seed) {
  spec.validate();
  if (X.rows() != y.size()) throw DataError("design and response lengths differ");
  if (spec.folds > X.rows()) {
    throw DataError("more folds than rows in ensemble fit");
  }
  const auto folds = make_folds(y, spec.folds, task == Task::BinaryProbability,
                                derive_seed(seed, {0xf01d}));
  const auto m = spec.candidates.size();
  const Index n = X.rows();
  Matrix oof = Matrix::Zero(n, static_cast<Index>(m));
  std::vector<bool> failed(m, false);
  std::vector<std::string> warnings;

  std::vector<std::vector<Index>> train(static_cast<std::size_t>(spec.folds));
  std::vector<std::vector<Index>> test(static_cast<std::size_t>(spec.folds));
  for (Index i = 0; i < n; ++i) {
    const auto f = static_cast<std::size_t>(folds[static_cast<std::size_t>(i)]);
    for (std::size_t g = 0; g < train.size(); ++g) {
      (g == f ? test[g] : train[g]).push_back(i);
    }
  }

  auto mark_failed = [&](std::size_t j, const std::string& why) {
    if (!failed[j]) {
      failed[j] = true;
      warnings.push_back("candidate " + std::to_string(j) + " (" +
                         to_string(spec.candidates[j].kind) +
                         ") dropped: " + why);
    }
  };

  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t f = 0; f < train.size() && !failed[j]; ++f) {
      DesignMatrix Xtr{X.columns, X.values(train[f], Eigen::all)};
      const Vector ytr = y(train[f]);
      try {
        const auto fit =
            fit_learner(spec.candidates[j], Xtr, ytr, task,
                        derive_seed(seed, {j, f}));
        if (!fit.info().converged) {
          mark_failed(j, "did not converge in fold " + std::to_string(f));
          break;
        }
        const Vector pred = fit.predict(Matrix(X.values(test[f], Eigen::all)));
        oof(test[f], static_cast<Index>(j)) = pred;
      } catch (const Error& e) {
        mark_failed(j, e.what());
      }
    }
  }

  std::vector<std::optional<FittedLearner>> refits(m);
  for (std::size_t j = 0; j < m; ++j) {
    if (failed[j]) continue;
    try {
      refits[j] = fit_learner(spec.candidates[j], X, y, task,
                              derive_seed(seed, {j, 0xa11}));
      if (!refits[j]->info().converged) {
        refits[j].reset();
        mark_failed(j, "did not converge on the full data");
      }
    } catch (const Error& e) {
      refits[j].reset();
      mark_failed(j, e.what());
    }
  }

  std::vector<Index> usable;
  for (std::size_t j = 0; j < m; ++j) {
    if (!failed[j]) usable.push_back(static_cast<Index>(j));
  }
  if (usable.empty()) {
    std::string why = "every ensemble candidate failed";
    for (const auto& w : warnings) why += "; " + w;
    throw FitError(why);
  }

  Vector cv_risk = Vector::Constant(static_cast<Index>(m),
                                    std::numeric_limits<double>::infinity());
  for (const Index j : usable) {
    cv_risk[j] = meta_risk(oof.col(j), y, Vector::Ones(1), spec.loss);
  }
  const Matrix Zu = oof(Eigen::all, usable);
  const Vector wu = fit_meta_weights(Zu, y, spec.loss);
  Vector weights = Vector::Zero(static_cast<Index>(m));
  weights(usable) = wu;

  return FittedEnsemble(task, X.columns, std::move(weights), std::move(refits),
                        std::move(cv_risk), std::move(oof), std::move(warnings));
}

}  // namespace drate
