// Small fixtures shared by the unit tests.
#pragma once

#include "drate/formula.hpp"
#include "drate/rng.hpp"
#include "drate/types.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace drate::testing {

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("drate_test_" + name)).string();
}

inline Matrix gaussian_matrix(Index rows, Index cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z;
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = z(rng);
  }
  return m;
}

/// Intercept column followed by the given feature columns.
inline DesignMatrix with_intercept(const Matrix& features) {
  DesignMatrix dm;
  dm.values.resize(features.rows(), features.cols() + 1);
  dm.values.col(0).setOnes();
  dm.values.rightCols(features.cols()) = features;
  dm.columns.emplace_back(kInterceptLabel);
  for (Index j = 0; j < features.cols(); ++j) {
    dm.columns.push_back("x" + std::to_string(j + 1));
  }
  return dm;
}

inline Vector bernoulli(const Vector& p, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector y(p.size());
  for (Index i = 0; i < p.size(); ++i) y[i] = u(rng) < p[i] ? 1.0 : 0.0;
  return y;
}

/// Covariates X1..Xd, confounded binary treatment and a linear outcome with
/// effect `ate`.
inline Dataset linear_dataset(Index n, Index d, double ate, std::uint64_t seed) {
  Dataset data;
  data.W = gaussian_matrix(n, d, seed);
  for (Index j = 0; j < d; ++j) {
    data.covariate_names.push_back("X" + std::to_string(j + 1));
  }
  Vector eta = 0.4 * data.W.col(0);
  if (d > 1) eta += -0.3 * data.W.col(1);
  data.A = bernoulli(expit(eta), derive_seed(seed, {1}));
  Rng rng(derive_seed(seed, {2}));
  std::normal_distribution<double> noise;
  data.Y.resize(n);
  for (Index i = 0; i < n; ++i) {
    double mu = 1.0 + ate * data.A[i];
    for (Index j = 0; j < d; ++j) mu += data.W(i, j) / static_cast<double>(j + 1);
    data.Y[i] = mu + noise(rng);
  }
  return data;
}

}  // namespace drate::testing
