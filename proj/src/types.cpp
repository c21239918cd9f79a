#include "drate/types.hpp"

#include "drate/rng.hpp"

#include <algorithm>

namespace drate {

std::optional<Index> Dataset::covariate_index(const std::string& name) const {
  const auto it =
      std::find(covariate_names.begin(), covariate_names.end(), name);
  if (it == covariate_names.end()) return std::nullopt;
  return static_cast<Index>(it - covariate_names.begin());
}

void Dataset::validate(Index min_rows) const {
  const Index n = A.size();
  if (Y.size() != n || W.rows() != n) {
    throw DataError("dataset dimensions disagree: W has " +
                    std::to_string(W.rows()) + " rows, A " +
                    std::to_string(n) + ", Y " + std::to_string(Y.size()));
  }
  if (static_cast<Index>(covariate_names.size()) != W.cols()) {
    throw DataError("covariate name count does not match W columns");
  }
  if (n < min_rows) {
    throw DataError("dataset has " + std::to_string(n) +
                    " rows, at least " + std::to_string(min_rows) +
                    " required");
  }
  for (Index i = 0; i < n; ++i) {
    if (A[i] != 0.0 && A[i] != 1.0) {
      throw DataError("treatment is not binary at row " + std::to_string(i));
    }
  }
  if (!Y.allFinite()) throw DataError("outcome contains non-finite values");
  if (!W.allFinite()) throw DataError("covariates contain non-finite values");
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
  Dataset out;
  out.covariate_names = covariate_names;
  out.treatment_name = treatment_name;
  out.outcome_name = outcome_name;
  const auto m = static_cast<Index>(rows.size());
  out.W.resize(m, W.cols());
  out.A.resize(m);
  out.Y.resize(m);
  for (Index r = 0; r < m; ++r) {
    const Index src = rows[static_cast<std::size_t>(r)];
    out.W.row(r) = W.row(src);
    out.A[r] = A[src];
    out.Y[r] = Y[src];
  }
  return out;
}

double Dataset::treated_fraction() const {
  return A.size() == 0 ? 0.0 : A.mean();
}

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Ipw:
      return "ipw";
    case EstimatorKind::GComp:
      return "gcomp";
    case EstimatorKind::Aipw:
      return "aipw";
    case EstimatorKind::Tmle:
      return "tmle";
    case EstimatorKind::DcAipw:
      return "dc-aipw";
    case EstimatorKind::DcTmle:
      return "dc-tmle";
  }
  return "unknown";
}

AteEstimate wald_estimate(double psi, double se, EstimatorKind kind, Index n) {
  AteEstimate est;
  est.psi = psi;
  est.se = se;
  est.ci_lo = psi - kWaldZ * se;
  est.ci_hi = psi + kWaldZ * se;
  est.estimator = kind;
  est.n = n;
  return est;
}

double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of an empty vector");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

double running_mean(const double* values, std::size_t count) {
  if (count == 0) return 0.0;
  double mean = values[0];
  for (std::size_t k = 1; k < count; ++k) {
    mean += (values[k] - mean) / static_cast<double>(k + 1);
  }
  return mean;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master,
                          std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(master);
  for (const std::uint64_t tag : tags) h = splitmix64(h ^ splitmix64(tag));
  return h;
}

}  // namespace drate
