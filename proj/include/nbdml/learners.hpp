#pragma once

// Nuisance learners: bagged/subsampled CART forests, ridge by projected SGD,
// and closed-form (kernel) ridge. Every learner can be refit on a dataset with
// some rows replaced, sharing randomness with the original fit.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "nbdml/error.hpp"
#include "nbdml/rng.hpp"
#include "nbdml/tree.hpp"

namespace nbdml {

// ---------------------------------------------------------------- configs

enum class Resampling { bootstrap, subsample };

// Subsample size m as a function of the training size n~.
enum class SubsampleRule {
  cube_root,  // m = min(ceil(scale * n~^(1/3)), n~)
  full,       // m = n~
};

struct ForestConfig {
  std::size_t n_trees = 500;
  std::size_t min_leaf = 5;
  std::size_t max_depth = 0;  // 0 = unlimited
  Criterion criterion = Criterion::mse;
  Resampling resampling = Resampling::subsample;
  SubsampleRule subsample_rule = SubsampleRule::cube_root;
  double subsample_scale = 10.0;
  std::uint64_t seed = 0;

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (n_trees == 0) errs.emplace_back("n_trees must be >= 1");
    if (min_leaf == 0) errs.emplace_back("min_leaf must be >= 1");
    if (!(subsample_scale > 0.0)) errs.emplace_back("subsample_scale must be > 0");
    return errs;
  }

  std::size_t sample_size(std::size_t n_train) const noexcept {
    if (resampling == Resampling::bootstrap || subsample_rule == SubsampleRule::full) {
      return n_train;
    }
    const double m = std::ceil(subsample_scale * std::cbrt(static_cast<double>(n_train)));
    return std::min<std::size_t>(static_cast<std::size_t>(m), n_train);
  }
};

// Ridge objective 1/2 (y - x'theta)^2 + lambda/2 |theta|^2 minimised by one
// projected SGD pass with step t^(-a) / beta.
struct SgdConfig {
  double a = 0.7;
  double beta = 1.0;   // smoothness
  double lip = 1.0;    // Lipschitz constant L of the loss in theta
  double gamma = 0.0;  // strong convexity
  double lambda = 1.0;
  double theta_radius = 1.0;
  double feature_radius = 1.0;  // bound on |(y, x)|

  // Constants for the ridge loss on the ball |(y,x)| <= R_z, |theta| <= R_theta.
  static SgdConfig ridge(double feature_radius, double theta_radius, double lambda, double a) {
    SgdConfig c;
    c.a = a;
    c.lambda = lambda;
    c.gamma = lambda;
    c.theta_radius = theta_radius;
    c.feature_radius = feature_radius;
    const double rz2 = feature_radius * feature_radius;
    c.lip = rz2 * (1.0 + theta_radius) + lambda * theta_radius;
    c.beta = rz2 + lambda;
    return c;
  }

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (!(a > 0.0 && a < 1.0)) errs.emplace_back("learning-rate exponent a must lie in (0,1)");
    if (!(beta > 0.0)) errs.emplace_back("beta must be > 0");
    if (!(lip > 0.0)) errs.emplace_back("L must be > 0");
    if (!(gamma >= 0.0)) errs.emplace_back("gamma must be >= 0");
    if (!(lambda >= 0.0)) errs.emplace_back("lambda must be >= 0");
    if (!(theta_radius > 0.0)) errs.emplace_back("theta_radius must be > 0");
    return errs;
  }

  // Required lower bound on gamma/beta for sample size n.
  double required_gamma_over_beta(std::size_t n) const {
    const double nn = static_cast<double>(n);
    return a * (1.0 - a) / (1.0 - std::pow(2.0, -(1.0 - a))) * std::log(nn) / std::pow(nn, 1.0 - a);
  }

  bool side_condition_holds(std::size_t n) const {
    return gamma / beta >= required_gamma_over_beta(n);
  }
};

enum class KernelKind { linear, gaussian };

struct RidgeKernelConfig {
  double lambda = 1.0;
  KernelKind kernel = KernelKind::linear;
  double bandwidth = 1.0;     // gaussian only
  double kernel_bound = 1.0;  // C_kappa = sup_x sqrt(k(x, x))

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (!(lambda > 0.0)) errs.emplace_back("ridge lambda must be > 0");
    if (kernel == KernelKind::gaussian && !(bandwidth > 0.0)) {
      errs.emplace_back("gaussian bandwidth must be > 0");
    }
    return errs;
  }
};

// Ignores the data.
struct ConstantSpec {
  double value = 0.0;
};

using LearnerSpec = std::variant<ConstantSpec, ForestConfig, SgdConfig, RidgeKernelConfig>;

// ---------------------------------------------------------------- models

struct ConstantModel {
  double value = 0.0;
};

struct ForestModel {
  std::vector<DecisionTree> trees;
  // Sorted unit ids each tree was trained on (with multiplicity).
  std::vector<std::vector<std::uint32_t>> tree_ids;
  std::size_t sample_size = 0;
};

struct LinearModel {
  std::vector<double> coef;
};

struct KernelModel {
  double bandwidth = 1.0;
  FeatureMatrix centers;
  std::vector<double> alpha;
};

enum class LearnerKind { constant, forest, sgd_ridge, ridge_closed, kernel_ridge };

class Predictor {
 public:
  using Model = std::variant<ConstantModel, ForestModel, LinearModel, KernelModel>;

  Predictor() = default;
  Predictor(Model model, LearnerKind kind, std::size_t n_train)
      : model_(std::move(model)), kind_(kind), n_train_(n_train) {}

  static Predictor constant(double v, std::size_t n_train = 0) {
    return {ConstantModel{v}, LearnerKind::constant, n_train};
  }

  double predict(std::span<const double> x) const {
    return std::visit([&](const auto& m) { return eval(m, x); }, model_);
  }

  LearnerKind kind() const noexcept { return kind_; }
  std::size_t training_size() const noexcept { return n_train_; }
  const Model& model() const noexcept { return model_; }

  const ForestModel* forest() const noexcept { return std::get_if<ForestModel>(&model_); }
  const LinearModel* linear() const noexcept { return std::get_if<LinearModel>(&model_); }

 private:
  static double eval(const ConstantModel& m, std::span<const double>) { return m.value; }

  static double eval(const ForestModel& m, std::span<const double> x) {
    double s = 0.0;
    for (const auto& t : m.trees) s += t.predict(x);
    return s / static_cast<double>(m.trees.size());
  }

  static double eval(const LinearModel& m, std::span<const double> x) {
    if (x.size() != m.coef.size()) throw ArgumentError("feature dimension mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) s += m.coef[k] * x[k];
    return s;
  }

  static double eval(const KernelModel& m, std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.alpha.size(); ++i) {
      double d2 = 0.0;
      const auto c = m.centers.row(i);
      for (std::size_t k = 0; k < x.size(); ++k) d2 += (c[k] - x[k]) * (c[k] - x[k]);
      s += m.alpha[i] * std::exp(-d2 / (2.0 * m.bandwidth * m.bandwidth));
    }
    return s;
  }

  Model model_ = ConstantModel{};
  LearnerKind kind_ = LearnerKind::constant;
  std::size_t n_train_ = 0;
};

// ---------------------------------------------------------------- forest

namespace detail {

inline constexpr std::uint64_t kStreamTree = rng::tag("forest-tree");

inline std::vector<std::uint32_t> default_ids(std::size_t n) {
  std::vector<std::uint32_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0u);
  return ids;
}

// Rows drawn for tree b. Depends only on (seed, b, ids): subsamples keep the m
// rows with the smallest hash keys; bootstrap draws positions in id order.
inline std::vector<std::uint32_t> draw_rows(const ForestConfig& cfg, std::size_t b,
                                            std::span<const std::uint32_t> ids,
                                            std::span<const std::uint32_t> id_order) {
  const auto n = ids.size();
  const auto m = cfg.sample_size(n);
  const auto tree_key = rng::derive(cfg.seed, kStreamTree, b);
  std::vector<std::uint32_t> rows;
  rows.reserve(m);
  if (cfg.resampling == Resampling::bootstrap) {
    for (std::size_t t = 0; t < m; ++t) {
      auto pos = static_cast<std::size_t>(rng::uniform(tree_key, 0, t) * static_cast<double>(n));
      pos = std::min(pos, n - 1);
      rows.push_back(id_order[pos]);
    }
    return rows;
  }
  if (m == n) return {id_order.begin(), id_order.end()};
  std::vector<std::pair<std::uint64_t, std::uint32_t>> keyed(n);
  for (std::size_t r = 0; r < n; ++r) {
    keyed[r] = {rng::derive(tree_key, ids[r]), static_cast<std::uint32_t>(r)};
  }
  std::nth_element(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(m), keyed.end());
  for (std::size_t k = 0; k < m; ++k) rows.push_back(keyed[k].second);
  std::sort(rows.begin(), rows.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });
  return rows;
}

inline std::vector<std::uint32_t> order_by_id(std::span<const std::uint32_t> ids) {
  std::vector<std::uint32_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (ids[order[k]] == ids[order[k - 1]]) throw ArgumentError("duplicate unit id in training set");
  }
  return order;
}

inline void check_training(const FeatureMatrix& X, std::span<const double> y,
                           std::span<const std::uint32_t> ids) {
  if (X.rows() != y.size()) throw ArgumentError("feature rows and targets differ in length");
  if (!ids.empty() && ids.size() != y.size()) throw ArgumentError("ids and targets differ in length");
}

}  // namespace detail

// Refit that reuses trees of `base` whose drawn id multiset is unchanged and
// avoids every id in `changed`. Pass base = nullptr for a plain fit.
inline Predictor fit_forest_reusing(const FeatureMatrix& X, std::span<const double> y,
                                    const ForestConfig& cfg, std::span<const std::uint32_t> ids_in,
                                    const ForestModel* base,
                                    const std::unordered_set<std::uint32_t>& changed) {
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs);
  detail::check_training(X, y, ids_in);
  const auto n = y.size();
  if (n == 0) throw DataError("cannot fit a forest on zero rows");
  if (cfg.criterion == Criterion::gini) {
    for (double v : y) {
      if (v != 0.0 && v != 1.0) throw ArgumentError("gini criterion needs binary targets");
    }
  }
  const auto ids = ids_in.empty() ? detail::default_ids(n)
                                  : std::vector<std::uint32_t>(ids_in.begin(), ids_in.end());
  const auto order = detail::order_by_id(ids);
  const TreeParams params{cfg.criterion, cfg.min_leaf, cfg.max_depth};
  ForestModel model;
  model.sample_size = cfg.sample_size(n);
  model.trees.reserve(cfg.n_trees);
  model.tree_ids.reserve(cfg.n_trees);
  const bool can_reuse = base != nullptr && base->trees.size() == cfg.n_trees;
  for (std::size_t b = 0; b < cfg.n_trees; ++b) {
    auto rows = detail::draw_rows(cfg, b, ids, order);
    std::vector<std::uint32_t> drawn(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) drawn[k] = ids[rows[k]];
    std::sort(drawn.begin(), drawn.end());
    if (can_reuse && base->tree_ids[b] == drawn &&
        std::none_of(drawn.begin(), drawn.end(), [&](auto id) { return changed.count(id) > 0; })) {
      model.trees.push_back(base->trees[b]);
    } else {
      model.trees.push_back(DecisionTree::fit(X, y, std::move(rows), params));
    }
    model.tree_ids.push_back(std::move(drawn));
  }
  return {std::move(model), LearnerKind::forest, n};
}

// Bagged CART. `ids` are stable unit identifiers used to key the resampling;
// defaults to row positions.
inline Predictor fit_forest(const FeatureMatrix& X, std::span<const double> y,
                            const ForestConfig& cfg, std::span<const std::uint32_t> ids = {}) {
  return fit_forest_reusing(X, y, cfg, ids, nullptr, {});
}

// ---------------------------------------------------------------- SGD ridge

inline void project_to_ball(std::vector<double>& theta, double radius) {
  double norm2 = 0.0;
  for (double v : theta) norm2 += v * v;
  if (norm2 > radius * radius) {
    const double s = radius / std::sqrt(norm2);
    for (double& v : theta) v *= s;
  }
}

// One pass in row order from theta = 0; returns the final iterate.
inline std::vector<double> sgd_ridge_coefficients(const FeatureMatrix& X, std::span<const double> y,
                                                  const SgdConfig& cfg) {
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs);
  detail::check_training(X, y, {});
  std::vector<double> theta(X.cols, 0.0);
  for (std::size_t t = 0; t < y.size(); ++t) {
    const auto x = X.row(t);
    const double step = std::pow(static_cast<double>(t + 1), -cfg.a) / cfg.beta;
    double pred = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) pred += x[k] * theta[k];
    const double resid = y[t] - pred;
    for (std::size_t k = 0; k < x.size(); ++k) {
      theta[k] -= step * (-resid * x[k] + cfg.lambda * theta[k]);
    }
    project_to_ball(theta, cfg.theta_radius);
  }
  return theta;
}

inline Predictor fit_sgd_ridge(const FeatureMatrix& X, std::span<const double> y,
                               const SgdConfig& cfg) {
  return {LinearModel{sgd_ridge_coefficients(X, y, cfg)}, LearnerKind::sgd_ridge, y.size()};
}

// ---------------------------------------------------------------- closed-form ridge

// argmin (1/n) sum (y_i - g(x_i))^2 + lambda |g|^2 in the kernel's RKHS.
inline Predictor fit_ridge_closed(const FeatureMatrix& X, std::span<const double> y,
                                  const RidgeKernelConfig& cfg) {
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs);
  detail::check_training(X, y, {});
  const auto n = y.size();
  const auto d = X.cols;
  if (n == 0) throw DataError("cannot fit ridge on zero rows");
  const double nl = static_cast<double>(n) * cfg.lambda;
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Xm(
      X.values.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Eigen::Map<const Eigen::VectorXd> ym(y.data(), static_cast<Eigen::Index>(n));
  if (cfg.kernel == KernelKind::linear) {
    Eigen::MatrixXd A = Xm.transpose() * Xm;
    A.diagonal().array() += nl;
    const Eigen::VectorXd w = A.ldlt().solve(Xm.transpose() * ym);
    return {LinearModel{std::vector<double>(w.data(), w.data() + w.size())},
            LearnerKind::ridge_closed, n};
  }
  Eigen::MatrixXd K(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const double h2 = 2.0 * cfg.bandwidth * cfg.bandwidth;
  for (Eigen::Index i = 0; i < K.rows(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = std::exp(-(Xm.row(i) - Xm.row(j)).squaredNorm() / h2);
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  K.diagonal().array() += nl;
  const Eigen::VectorXd alpha = K.ldlt().solve(ym);
  KernelModel km;
  km.bandwidth = cfg.bandwidth;
  km.centers = X;
  km.alpha.assign(alpha.data(), alpha.data() + alpha.size());
  return {std::move(km), LearnerKind::kernel_ridge, n};
}

// ---------------------------------------------------------------- generic entry points

inline Predictor fit_learner(const LearnerSpec& spec, const FeatureMatrix& X,
                             std::span<const double> y, std::span<const std::uint32_t> ids = {}) {
  return std::visit(
      [&](const auto& cfg) -> Predictor {
        using T = std::decay_t<decltype(cfg)>;
        if constexpr (std::is_same_v<T, ConstantSpec>) {
          return Predictor::constant(cfg.value, y.size());
        } else if constexpr (std::is_same_v<T, ForestConfig>) {
          return fit_forest(X, y, cfg, ids);
        } else if constexpr (std::is_same_v<T, SgdConfig>) {
          return fit_sgd_ridge(X, y, cfg);
        } else {
          return fit_ridge_closed(X, y, cfg);
        }
      },
      spec);
}

struct TrainingRow {
  std::vector<double> features;
  double target = 0.0;
};

// Refits `spec` after replacing the listed rows. Forests reuse the original
// per-tree draws, so trees that never saw a replaced row come out identical;
// passing the unperturbed fit as `base` skips refitting those trees.
inline Predictor retrain_on_perturbed(const LearnerSpec& spec, const FeatureMatrix& X,
                                      std::span<const double> y,
                                      const std::map<std::size_t, TrainingRow>& replacement,
                                      std::span<const std::uint32_t> ids = {},
                                      const Predictor* base = nullptr) {
  FeatureMatrix X2 = X;
  std::vector<double> y2(y.begin(), y.end());
  std::unordered_set<std::uint32_t> changed;
  for (const auto& [row, rep] : replacement) {
    if (row >= y2.size()) throw ArgumentError("replacement row " + std::to_string(row) + " out of range");
    if (rep.features.size() != X.cols) throw ArgumentError("replacement feature dimension mismatch");
    std::copy(rep.features.begin(), rep.features.end(), X2.row(row).begin());
    y2[row] = rep.target;
    changed.insert(ids.empty() ? static_cast<std::uint32_t>(row) : ids[row]);
  }
  if (const auto* fc = std::get_if<ForestConfig>(&spec)) {
    const ForestModel* bm = base != nullptr ? base->forest() : nullptr;
    return fit_forest_reusing(X2, y2, *fc, ids, bm, changed);
  }
  return fit_learner(spec, X2, y2, ids);
}

}  // namespace nbdml
