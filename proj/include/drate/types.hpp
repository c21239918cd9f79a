// Core value types shared by every drate module.
//
// Observed data is a triple (W, A, Y): a covariate matrix, a binary
// treatment and a real-valued outcome. The target is the average treatment
// effect E[Y(1)] - E[Y(0)], identified under exchangeability, consistency,
// no interference and positivity. None of these assumptions can be checked
// from data, so nothing here tries to.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace drate {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (wrong dimensions, NaN, missing
/// columns).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A model could not be fitted.
class FitError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Observed sample. Covariate columns are addressed by name; the treatment
/// and outcome names are how formulas refer to A and Y.
struct Dataset {
  Matrix W;
  Vector A;
  Vector Y;
  std::vector<std::string> covariate_names;
  std::string treatment_name = "A";
  std::string outcome_name = "Y";

  Index rows() const { return A.size(); }
  Index covariates() const { return W.cols(); }

  /// Column index of a covariate, or nullopt.
  std::optional<Index> covariate_index(const std::string& name) const;

  /// Throws DataError unless dimensions agree, A is binary, all values are
  /// finite and n >= min_rows.
  void validate(Index min_rows = 10) const;

  /// Rows selected by index, in the given order (duplicates allowed).
  Dataset subset(const std::vector<Index>& rows) const;

  double treated_fraction() const;
};

enum class EstimatorKind { Ipw, GComp, Aipw, Tmle, DcAipw, DcTmle };

std::string to_string(EstimatorKind kind);

/// A point estimate with its Wald-style (or bootstrap) interval.
struct AteEstimate {
  double psi = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  EstimatorKind estimator = EstimatorKind::Aipw;
  Index n = 0;
  std::map<std::string, double> diagnostics;
};

/// psi +/- 1.96 se.
AteEstimate wald_estimate(double psi, double se, EstimatorKind kind, Index n);

inline constexpr double kWaldZ = 1.96;

template <std::floating_point Scalar>
Scalar expit(Scalar x) {
  using std::exp;
  return x >= Scalar(0) ? Scalar(1) / (Scalar(1) + exp(-x))
                        : exp(x) / (Scalar(1) + exp(x));
}

template <std::floating_point Scalar>
Scalar logit(Scalar p) {
  using std::log;
  return log(p / (Scalar(1) - p));
}

/// Elementwise expit over any Eigen expression.
template <typename Derived>
Vector expit(const Eigen::MatrixBase<Derived>& eta) {
  return eta.unaryExpr([](double v) { return expit(v); });
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" definition).
template <typename Derived>
double quantile(const Eigen::DenseBase<Derived>& values, double prob) {
  std::vector<double> sorted;
  sorted.reserve(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) {
    sorted.push_back(values.derived().coeff(i));
  }
  if (sorted.empty()) throw DataError("quantile of an empty vector");
  std::sort(sorted.begin(), sorted.end());
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double median(std::vector<double> values);

/// Incremental mean. Exact when every value is identical.
double running_mean(const double* values, std::size_t count);

template <typename Derived>
double running_mean(const Eigen::DenseBase<Derived>& values) {
  std::vector<double> copy;
  copy.reserve(static_cast<std::size_t>(values.size()));
  for (Index i = 0; i < values.size(); ++i) {
    copy.push_back(values.derived().coeff(i));
  }
  return running_mean(copy.data(), copy.size());
}

/// Sample standard deviation (divisor n - 1).
template <typename Derived>
double sample_sd(const Eigen::MatrixBase<Derived>& values) {
  const Index n = values.size();
  if (n < 2) return 0.0;
  const double mean = values.mean();
  return std::sqrt((values.array() - mean).square().sum() /
                   static_cast<double>(n - 1));
}

}  // namespace drate
