#include "drate/learners.hpp"

#include "internal.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace drate {

Matrix natural_spline_basis(const Vector& x, const std::vector<double>& knots) {
  const auto K = static_cast<Index>(knots.size());
  if (K < 2) throw ConfigError("natural spline needs at least two knots");
  for (Index k = 1; k < K; ++k) {
    if (!(knots[static_cast<std::size_t>(k)] >
          knots[static_cast<std::size_t>(k - 1)])) {
      throw ConfigError("spline knots must be strictly increasing");
    }
  }
  const double last = knots.back();
  const double penultimate = knots[static_cast<std::size_t>(K - 2)];
  auto cube = [](double v) { return v > 0 ? v * v * v : 0.0; };
  auto d = [&](double xv, double knot) {
    return (cube(xv - knot) - cube(xv - last)) / (last - knot);
  };

  Matrix basis(x.size(), K - 1);
  for (Index i = 0; i < x.size(); ++i) {
    const double xv = x[i];
    basis(i, 0) = xv;
    const double dlast = d(xv, penultimate);
    for (Index k = 0; k + 2 < K; ++k) {
      basis(i, k + 1) = d(xv, knots[static_cast<std::size_t>(k)]) - dlast;
    }
  }
  return basis;
}

namespace {

constexpr int kMinUniqueForSpline = 5;

/// Per design column: empty knots keep the column linear.
struct ColumnExpansion {
  std::vector<double> knots;
};

std::vector<ColumnExpansion> plan_expansion(const Matrix& X) {
  std::vector<ColumnExpansion> plan(static_cast<std::size_t>(X.cols()));
  for (Index j = 0; j < X.cols(); ++j) {
    const std::set<double> unique(X.col(j).data(),
                                  X.col(j).data() + X.rows());
    if (static_cast<int>(unique.size()) < kMinUniqueForSpline) continue;
    std::vector<double> knots{*unique.begin()};
    for (const double q : {0.25, 0.5, 0.75}) knots.push_back(quantile(X.col(j), q));
    knots.push_back(*unique.rbegin());
    knots.erase(std::unique(knots.begin(), knots.end(),
                            [](double a, double b) { return !(b > a); }),
                knots.end());
    if (knots.size() >= 3) plan[static_cast<std::size_t>(j)].knots = knots;
  }
  return plan;
}

Matrix expand(const Matrix& X, const std::vector<ColumnExpansion>& plan) {
  Index width = 0;
  for (const auto& c : plan) {
    width += c.knots.empty() ? 1 : static_cast<Index>(c.knots.size()) - 1;
  }
  Matrix out(X.rows(), width);
  Index at = 0;
  for (Index j = 0; j < X.cols(); ++j) {
    const auto& knots = plan[static_cast<std::size_t>(j)].knots;
    if (knots.empty()) {
      out.col(at++) = X.col(j);
    } else {
      const Matrix b = natural_spline_basis(X.col(j), knots);
      out.middleCols(at, b.cols()) = b;
      at += b.cols();
    }
  }
  return out;
}

class SplineModel final : public Model {
 public:
  SplineModel(std::vector<ColumnExpansion> plan, FittedLearner inner)
      : plan_(std::move(plan)), inner_(std::move(inner)) {}

  Vector predict(const Matrix& X) const override {
    return inner_.predict(expand(X, plan_));
  }

 private:
  std::vector<ColumnExpansion> plan_;
  FittedLearner inner_;
};

}  // namespace

FittedLearner fit_spline(const DesignMatrix& X, const Vector& y, Task task) {
  detail::check_inputs(X.values, y);
  detail::check_task_response(y, task);
  if (X.rows() < 20) {
    throw DataError("spline learner needs at least 20 rows, got " +
                    std::to_string(X.rows()));
  }
  auto plan = plan_expansion(X.values);
  DesignMatrix expanded;
  expanded.values = expand(X.values, plan);
  for (Index j = 0; j < X.cols(); ++j) {
    const auto& knots = plan[static_cast<std::size_t>(j)].knots;
    const auto& name = X.columns[static_cast<std::size_t>(j)];
    if (knots.empty()) {
      expanded.columns.push_back(name);
      continue;
    }
    for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
      expanded.columns.push_back(name + "#ns" + std::to_string(k + 1));
    }
  }
  FittedLearner inner =
      task == Task::Regression
          ? fit_ols(expanded, y)
          : detail::fit_logistic_with(expanded, y,
                                      {LearnerKind::LogisticGlm, {}});
  FitInfo info = inner.info();
  return FittedLearner({LearnerKind::Spline, {}}, task, X.columns,
                       std::make_shared<SplineModel>(std::move(plan),
                                                     std::move(inner)),
                       std::move(info));
}

}  // namespace drate
