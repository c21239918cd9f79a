// CART-style trees on pre-binned features. Each column is cut into at most
// 256 bins whose edges are midpoints between distinct training values, so
// columns with few distinct values are split exactly.
#include "drate/learners.hpp"

#include "drate/rng.hpp"
#include "internal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>

namespace drate {

namespace {

constexpr std::size_t kMaxBins = 256;

struct BinnedFeatures {
  Index rows = 0;
  std::vector<std::vector<double>> edges;  // per column, strictly increasing
  std::vector<std::uint8_t> codes;         // column-major rows x cols
  std::vector<Index> varying;              // columns with >= 2 bins

  std::uint8_t code(Index row, Index col) const {
    return codes[static_cast<std::size_t>(col * rows + row)];
  }
};

BinnedFeatures bin_features(const Matrix& X) {
  BinnedFeatures b;
  b.rows = X.rows();
  b.edges.resize(static_cast<std::size_t>(X.cols()));
  b.codes.resize(static_cast<std::size_t>(X.rows() * X.cols()));
  for (Index j = 0; j < X.cols(); ++j) {
    std::vector<double> values(X.col(j).data(), X.col(j).data() + X.rows());
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    auto& edges = b.edges[static_cast<std::size_t>(j)];
    if (values.size() <= kMaxBins) {
      for (std::size_t k = 0; k + 1 < values.size(); ++k) {
        edges.push_back(0.5 * (values[k] + values[k + 1]));
      }
    } else {
      // Cut points at evenly spaced ranks of the distinct values.
      for (std::size_t k = 1; k < kMaxBins; ++k) {
        const std::size_t r = k * values.size() / kMaxBins;
        const double e = 0.5 * (values[r - 1] + values[r]);
        if (edges.empty() || e > edges.back()) edges.push_back(e);
      }
    }
    for (Index i = 0; i < X.rows(); ++i) {
      const auto bin = std::lower_bound(edges.begin(), edges.end(), X(i, j)) -
                       edges.begin();
      b.codes[static_cast<std::size_t>(j * X.rows() + i)] =
          static_cast<std::uint8_t>(bin);
    }
    if (!edges.empty()) b.varying.push_back(j);
  }
  return b;
}

struct Node {
  Index feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
};

class Tree {
 public:
  explicit Tree(std::vector<Node> nodes) : nodes_(std::move(nodes)) {}

  double predict(const Matrix& X, Index row) const {
    int at = 0;
    while (nodes_[static_cast<std::size_t>(at)].feature >= 0) {
      const Node& n = nodes_[static_cast<std::size_t>(at)];
      at = X(row, n.feature) <= n.threshold ? n.left : n.right;
    }
    return nodes_[static_cast<std::size_t>(at)].value;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

struct TreeSettings {
  int max_depth = 8;
  double min_leaf = 5;
  std::size_t mtry = 0;  // 0: every varying column
};

/// Grows one tree minimizing weighted squared error of `target`. Leaves
/// predict sum(w t) / sum(w h), which is the weighted mean when h = 1 and
/// a Newton step when t and h are gradient and Hessian.
class TreeBuilder {
 public:
  TreeBuilder(const BinnedFeatures& bins, const Vector& target,
              const Vector& hessian, const std::vector<double>& weight,
              TreeSettings settings, Rng* rng)
      : bins_(bins),
        target_(target),
        hessian_(hessian),
        weight_(weight),
        settings_(settings),
        rng_(rng) {}

  Tree build() {
    std::vector<Index> rows;
    for (Index i = 0; i < bins_.rows; ++i) {
      if (weight_[static_cast<std::size_t>(i)] > 0) rows.push_back(i);
    }
    nodes_.clear();
    grow(rows, 0, rows.size(), 0);
    return Tree(std::move(nodes_));
  }

 private:
  struct Split {
    Index feature = -1;
    int bin = -1;
    double gain = 0.0;
  };

  int grow(std::vector<Index>& rows, std::size_t begin, std::size_t end,
           int depth) {
    double sw = 0.0;
    double st = 0.0;
    double sh = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const Index r = rows[k];
      const double w = weight_[static_cast<std::size_t>(r)];
      sw += w;
      st += w * target_[r];
      sh += w * hessian_[r];
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    nodes_.back().value = sh > 1e-12 ? st / sh : 0.0;

    if (depth >= settings_.max_depth || sw < 2 * settings_.min_leaf) return id;
    const Split split = best_split(rows, begin, end, sw, st);
    if (split.feature < 0) return id;

    const auto mid = static_cast<std::size_t>(
        std::partition(rows.begin() + static_cast<std::ptrdiff_t>(begin),
                       rows.begin() + static_cast<std::ptrdiff_t>(end),
                       [&](Index r) {
                         return bins_.code(r, split.feature) <= split.bin;
                       }) -
        rows.begin());
    const int left = grow(rows, begin, mid, depth + 1);
    const int right = grow(rows, mid, end, depth + 1);
    Node& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = split.feature;
    node.threshold =
        bins_.edges[static_cast<std::size_t>(split.feature)]
                   [static_cast<std::size_t>(split.bin)];
    node.left = left;
    node.right = right;
    return id;
  }

  std::vector<Index> candidates() {
    std::vector<Index> features = bins_.varying;
    const std::size_t m = settings_.mtry;
    if (m == 0 || m >= features.size() || rng_ == nullptr) return features;
    // Partial Fisher-Yates: the first m entries become the sample.
    for (std::size_t k = 0; k < m; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, features.size() - 1);
      std::swap(features[k], features[pick(*rng_)]);
    }
    features.resize(m);
    std::sort(features.begin(), features.end());
    return features;
  }

  Split best_split(const std::vector<Index>& rows, std::size_t begin,
                   std::size_t end, double sw, double st) {
    Split best;
    const double parent = st * st / sw;
    const double min_gain = 1e-12 * (std::abs(parent) + 1.0);
    std::array<double, kMaxBins> hw{};
    std::array<double, kMaxBins> ht{};
    for (const Index f : candidates()) {
      const auto nbins = bins_.edges[static_cast<std::size_t>(f)].size() + 1;
      std::fill_n(hw.begin(), nbins, 0.0);
      std::fill_n(ht.begin(), nbins, 0.0);
      for (std::size_t k = begin; k < end; ++k) {
        const Index r = rows[k];
        const double w = weight_[static_cast<std::size_t>(r)];
        const auto b = bins_.code(r, f);
        hw[b] += w;
        ht[b] += w * target_[r];
      }
      double lw = 0.0;
      double lt = 0.0;
      for (std::size_t b = 0; b + 1 < nbins; ++b) {
        lw += hw[b];
        lt += ht[b];
        if (hw[b] == 0.0) continue;
        const double rw = sw - lw;
        if (lw < settings_.min_leaf) continue;
        if (rw < settings_.min_leaf) break;
        const double rt = st - lt;
        const double gain = lt * lt / lw + rt * rt / rw - parent;
        if (gain > best.gain && gain > min_gain) {
          best = {f, static_cast<int>(b), gain};
        }
      }
    }
    return best;
  }

  const BinnedFeatures& bins_;
  const Vector& target_;
  const Vector& hessian_;
  const std::vector<double>& weight_;
  TreeSettings settings_;
  Rng* rng_;
  std::vector<Node> nodes_;
};

class ForestModel final : public Model {
 public:
  explicit ForestModel(std::vector<Tree> trees) : trees_(std::move(trees)) {}

  Vector predict(const Matrix& X) const override {
    Vector out = Vector::Zero(X.rows());
    for (Index i = 0; i < X.rows(); ++i) {
      double s = 0.0;
      for (const auto& t : trees_) s += t.predict(X, i);
      out[i] = s / static_cast<double>(trees_.size());
    }
    return out;
  }

 private:
  std::vector<Tree> trees_;
};

class BoostedModel final : public Model {
 public:
  BoostedModel(double init, double rate, std::vector<Tree> trees, bool logistic)
      : init_(init), rate_(rate), trees_(std::move(trees)), logistic_(logistic) {}

  Vector predict(const Matrix& X) const override {
    Vector eta = Vector::Constant(X.rows(), init_);
    for (Index i = 0; i < X.rows(); ++i) {
      for (const auto& t : trees_) eta[i] += rate_ * t.predict(X, i);
    }
    if (!logistic_) return eta;
    return expit(eta)
        .cwiseMax(kProbabilityClamp)
        .cwiseMin(1.0 - kProbabilityClamp);
  }

 private:
  double init_;
  double rate_;
  std::vector<Tree> trees_;
  bool logistic_;
};

void check_tree_inputs(const DesignMatrix& X, const Vector& y, Task task) {
  detail::check_inputs(X.values, y);
  detail::check_task_response(y, task);
  if (X.rows() < 20) {
    throw DataError("tree learners need at least 20 rows, got " +
                    std::to_string(X.rows()));
  }
}

}  // namespace

FittedLearner fit_random_forest(const DesignMatrix& X, const Vector& y,
                                Task task, std::uint64_t seed,
                                const LearnerSpec* spec_in) {
  check_tree_inputs(X, y, task);
  LearnerSpec spec = spec_in ? *spec_in
                             : LearnerSpec{LearnerKind::RandomForest, {}};
  spec.validate();
  const BinnedFeatures bins = bin_features(X.values);
  const auto n = static_cast<std::size_t>(X.rows());

  TreeSettings settings;
  settings.max_depth = static_cast<int>(spec.get("max_depth"));
  settings.min_leaf = spec.get("min_leaf");
  const auto mtry = static_cast<std::size_t>(spec.get("mtry"));
  settings.mtry = mtry > 0 ? mtry
                           : static_cast<std::size_t>(std::ceil(std::sqrt(
                                 static_cast<double>(bins.varying.size()))));

  const Vector ones = Vector::Ones(X.rows());
  const int n_trees = static_cast<int>(spec.get("n_trees"));
  std::vector<Tree> trees;
  trees.reserve(static_cast<std::size_t>(n_trees));
  for (int t = 0; t < n_trees; ++t) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(t)}));
    std::vector<double> counts(n, 0.0);
    std::uniform_int_distribution<std::size_t> draw(0, n - 1);
    for (std::size_t k = 0; k < n; ++k) counts[draw(rng)] += 1.0;
    trees.push_back(TreeBuilder(bins, y, ones, counts, settings, &rng).build());
  }
  FitInfo info;
  return FittedLearner(spec, task, X.columns,
                       std::make_shared<ForestModel>(std::move(trees)),
                       std::move(info));
}

FittedLearner fit_gbt(const DesignMatrix& X, const Vector& y, Task task,
                      std::uint64_t /*seed*/, const LearnerSpec* spec_in) {
  check_tree_inputs(X, y, task);
  LearnerSpec spec = spec_in ? *spec_in
                             : LearnerSpec{LearnerKind::GradientBoostedTrees, {}};
  spec.validate();
  const BinnedFeatures bins = bin_features(X.values);
  const Index n = X.rows();
  const bool logistic = task == Task::BinaryProbability;

  TreeSettings settings;
  settings.max_depth = static_cast<int>(spec.get("max_depth"));
  settings.min_leaf = spec.get("min_leaf");
  const double rate = spec.get("learning_rate");
  const int n_trees = static_cast<int>(spec.get("n_trees"));

  const double init =
      logistic ? logit(std::clamp(y.mean(), kProbabilityClamp,
                                  1.0 - kProbabilityClamp))
               : y.mean();
  Vector eta = Vector::Constant(n, init);
  const std::vector<double> unit(static_cast<std::size_t>(n), 1.0);
  Vector gradient(n);
  Vector hessian = Vector::Ones(n);

  auto training_loss = [&]() {
    double loss = 0.0;
    for (Index i = 0; i < n; ++i) {
      loss += logistic ? detail::softplus(eta[i]) - y[i] * eta[i]
                       : 0.5 * (y[i] - eta[i]) * (y[i] - eta[i]);
    }
    return loss / static_cast<double>(n);
  };

  FitInfo info;
  info.training_loss.push_back(training_loss());
  std::vector<Tree> trees;
  trees.reserve(static_cast<std::size_t>(n_trees));
  for (int round = 0; round < n_trees; ++round) {
    if (logistic) {
      for (Index i = 0; i < n; ++i) {
        const double p = expit(eta[i]);
        gradient[i] = y[i] - p;
        hessian[i] = std::max(p * (1.0 - p), 1e-12);
      }
    } else {
      gradient = y - eta;
    }
    // Splits are chosen on the gradient alone; the Hessian only enters
    // through the leaf values.
    Tree tree =
        TreeBuilder(bins, gradient, hessian, unit, settings, nullptr).build();
    for (Index i = 0; i < n; ++i) eta[i] += rate * tree.predict(X.values, i);
    trees.push_back(std::move(tree));
    info.training_loss.push_back(training_loss());
  }
  info.iterations = n_trees;
  return FittedLearner(spec, task, X.columns,
                       std::make_shared<BoostedModel>(init, rate,
                                                      std::move(trees),
                                                      logistic),
                       std::move(info));
}

}  // namespace drate
