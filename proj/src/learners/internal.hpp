// Helpers shared by the learner implementations.
#pragma once

#include "drate/learners.hpp"

#include <cmath>
#include <string>

namespace drate::detail {

inline void check_inputs(const Matrix& X, const Vector& y) {
  if (X.rows() != y.size()) {
    throw DataError("design has " + std::to_string(X.rows()) +
                    " rows but response has " + std::to_string(y.size()));
  }
  if (X.rows() == 0 || X.cols() == 0) throw DataError("empty design matrix");
  if (!X.allFinite()) throw DataError("design matrix has non-finite values");
  if (!y.allFinite()) throw DataError("response has non-finite values");
}

inline void check_binary(const Vector& y) {
  bool has0 = false;
  bool has1 = false;
  for (Index i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) {
      has0 = true;
    } else if (y[i] == 1.0) {
      has1 = true;
    } else {
      throw DataError("binary response has value " + std::to_string(y[i]));
    }
  }
  if (!has0 || !has1) throw FitError("binary response has a single class");
}

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline void check_task_response(const Vector& y, Task task) {
  if (task == Task::BinaryProbability) check_binary(y);
}

/// Index of the first all-ones column, or -1.
inline Index intercept_column(const Matrix& X) {
  for (Index j = 0; j < X.cols(); ++j) {
    if ((X.col(j).array() == 1.0).all()) return j;
  }
  return -1;
}

FittedLearner fit_logistic_with(const DesignMatrix& X, const Vector& y,
                                const LearnerSpec& spec);

}  // namespace drate::detail
