#pragma once

// CART regression/classification tree with exhaustive split search.
//
// Candidate thresholds are midpoints of consecutive distinct feature values.
// Ties in split quality go to the lowest feature index, then the lowest
// threshold, so a fit is a pure function of its (ordered) training rows.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "nbdml/error.hpp"

namespace nbdml {

// Dense row-major feature matrix.
struct FeatureMatrix {
  std::vector<double> values;
  std::size_t cols = 0;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t ncols) : values(rows * ncols), cols(ncols) {}

  std::size_t rows() const noexcept { return cols == 0 ? 0 : values.size() / cols; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return values[r * cols + c]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {values.data() + r * cols, cols};
  }
  std::span<double> row(std::size_t r) noexcept { return {values.data() + r * cols, cols}; }
};

enum class Criterion { gini, mse };

struct TreeParams {
  Criterion criterion = Criterion::mse;
  std::size_t min_leaf = 5;
  std::size_t max_depth = 0;  // 0 = unlimited
};

class DecisionTree {
 public:
  struct Node {
    std::int32_t feature = -1;  // -1 marks a leaf
    double threshold = 0.0;     // go left when x[feature] <= threshold
    std::int32_t left = -1;
    std::int32_t right = -1;
    double value = 0.0;
  };

  DecisionTree() = default;

  // `rows` index into X/y and may repeat (bootstrap draws count with multiplicity).
  static DecisionTree fit(const FeatureMatrix& X, std::span<const double> y,
                          std::vector<std::uint32_t> rows, const TreeParams& params) {
    if (rows.empty()) throw ArgumentError("cannot fit a tree on zero rows");
    if (params.min_leaf == 0) throw ArgumentError("min_leaf must be >= 1");
    DecisionTree t;
    Builder b{X, y, params, t.nodes_, {}};
    b.scratch.resize(rows.size());
    b.build(rows, 0, rows.size(), 0);
    return t;
  }

  double predict(std::span<const double> x) const noexcept {
    std::int32_t k = 0;
    while (nodes_[static_cast<std::size_t>(k)].feature >= 0) {
      const auto& nd = nodes_[static_cast<std::size_t>(k)];
      k = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes_[static_cast<std::size_t>(k)].value;
  }

  std::span<const Node> nodes() const noexcept { return nodes_; }

  std::size_t depth() const noexcept { return depth_from(0); }

  std::size_t leaf_count() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.feature < 0; }));
  }

  friend bool operator==(const DecisionTree& a, const DecisionTree& b) noexcept {
    if (a.nodes_.size() != b.nodes_.size()) return false;
    for (std::size_t i = 0; i < a.nodes_.size(); ++i) {
      const auto& p = a.nodes_[i];
      const auto& q = b.nodes_[i];
      if (p.feature != q.feature || p.threshold != q.threshold || p.left != q.left ||
          p.right != q.right || p.value != q.value) {
        return false;
      }
    }
    return true;
  }

 private:
  std::size_t depth_from(std::size_t k) const noexcept {
    const auto& nd = nodes_[k];
    if (nd.feature < 0) return 0;
    return 1 + std::max(depth_from(static_cast<std::size_t>(nd.left)),
                        depth_from(static_cast<std::size_t>(nd.right)));
  }

  struct Builder {
    const FeatureMatrix& X;
    std::span<const double> y;
    const TreeParams& params;
    std::vector<Node>& nodes;
    std::vector<std::uint32_t> scratch;

    // Impurity of a child with `count` rows, target sum `s` and square sum `sq`,
    // scaled by count (lower is better).
    double impurity(double count, double s, double sq) const noexcept {
      if (params.criterion == Criterion::gini) {
        // Binary targets: n * (1 - p^2 - (1-p)^2) = 2 s (n - s) / n.
        return 2.0 * s * (count - s) / count;
      }
      return sq - s * s / count;
    }

    std::int32_t build(std::vector<std::uint32_t>& rows, std::size_t lo, std::size_t hi,
                       std::size_t depth) {
      const auto idx = static_cast<std::int32_t>(nodes.size());
      nodes.emplace_back();
      const auto count = hi - lo;
      double s = 0.0, sq = 0.0;
      for (std::size_t k = lo; k < hi; ++k) {
        const double v = y[rows[k]];
        s += v;
        sq += v * v;
      }
      nodes[static_cast<std::size_t>(idx)].value = s / static_cast<double>(count);

      const bool depth_capped = params.max_depth != 0 && depth >= params.max_depth;
      if (depth_capped || count < 2 * params.min_leaf) return idx;
      const double parent = impurity(static_cast<double>(count), s, sq);
      if (parent <= 0.0) return idx;

      double best = parent;
      std::int32_t best_feature = -1;
      double best_threshold = 0.0;
      const double tol = 1e-12 * std::max(1.0, std::abs(parent));
      auto* buf = scratch.data() + lo;
      for (std::size_t f = 0; f < X.cols; ++f) {
        std::copy(rows.begin() + static_cast<std::ptrdiff_t>(lo),
                  rows.begin() + static_cast<std::ptrdiff_t>(hi), buf);
        std::sort(buf, buf + count, [&](std::uint32_t a, std::uint32_t b) {
          const double xa = X(a, f), xb = X(b, f);
          return xa < xb || (xa == xb && a < b);
        });
        double ls = 0.0, lsq = 0.0;
        for (std::size_t k = 0; k + 1 < count; ++k) {
          const double v = y[buf[k]];
          ls += v;
          lsq += v * v;
          const std::size_t nl = k + 1;
          const std::size_t nr = count - nl;
          if (nl < params.min_leaf) continue;
          if (nr < params.min_leaf) break;
          const double xa = X(buf[k], f);
          const double xb = X(buf[k + 1], f);
          if (!(xa < xb)) continue;
          const double score = impurity(static_cast<double>(nl), ls, lsq) +
                               impurity(static_cast<double>(nr), s - ls, sq - lsq);
          if (score < best - tol) {
            best = score;
            best_feature = static_cast<std::int32_t>(f);
            double mid = 0.5 * (xa + xb);
            if (!(mid < xb)) mid = xa;
            best_threshold = mid;
          }
        }
      }
      if (best_feature < 0) return idx;

      // Stable partition keeps the child row order a function of the parent's.
      const auto f = static_cast<std::size_t>(best_feature);
      auto mid_it = std::stable_partition(
          rows.begin() + static_cast<std::ptrdiff_t>(lo), rows.begin() + static_cast<std::ptrdiff_t>(hi),
          [&](std::uint32_t r) { return X(r, f) <= best_threshold; });
      const auto mid = static_cast<std::size_t>(mid_it - rows.begin());
      nodes[static_cast<std::size_t>(idx)].feature = best_feature;
      nodes[static_cast<std::size_t>(idx)].threshold = best_threshold;
      const auto l = build(rows, lo, mid, depth + 1);
      nodes[static_cast<std::size_t>(idx)].left = l;
      const auto r = build(rows, mid, hi, depth + 1);
      nodes[static_cast<std::size_t>(idx)].right = r;
      return idx;
    }
  };

  std::vector<Node> nodes_;
};

}  // namespace nbdml
