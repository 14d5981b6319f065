#pragma once

// Two-step method-of-moments DML: nuisances are fit first, then the affine
// moment equation is solved exactly. Either on the full sample, or by K-fold
// cross-fitting whose training folds exclude units near the evaluation fold.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include "json.hpp"
#include "nbdml/dgp.hpp"
#include "nbdml/error.hpp"
#include "nbdml/learners.hpp"
#include "nbdml/metric_space.hpp"
#include "nbdml/moments.hpp"
#include "nbdml/rng.hpp"

namespace nbdml {

// ---------------------------------------------------------------- nuisance specs

enum class FeatureSet { x_c, c_only, x_only };

inline std::size_t feature_count(FeatureSet fs) noexcept { return fs == FeatureSet::x_c ? 2 : 1; }

inline void write_features(const Observation& o, FeatureSet fs, std::span<double> out) noexcept {
  switch (fs) {
    case FeatureSet::x_c:
      out[0] = o.x;
      out[1] = o.c;
      break;
    case FeatureSet::c_only:
      out[0] = o.c;
      break;
    case FeatureSet::x_only:
      out[0] = o.x;
      break;
  }
}

// Learned nuisances. For DR-ATE `propensity` fits P(W=1|.) and `outcome` fits
// E[Y|W=w,.] separately per arm. For PLIV `propensity` fits E[W|.] and
// `outcome` fits both E[Y|.] and E[V|.].
struct LearnedNuisanceSpec {
  LearnerSpec propensity = ForestConfig{};
  LearnerSpec outcome = ForestConfig{};
  FeatureSet propensity_features = FeatureSet::x_c;
  FeatureSet outcome_features = FeatureSet::x_c;

  // The forest pair used for the interference design: depth-2 Gini
  // propensity trees and unlimited-depth MSE outcome trees, min leaf 5.
  static LearnedNuisanceSpec forests(Resampling resampling, std::size_t n_trees,
                                     SubsampleRule rule = SubsampleRule::cube_root) {
    ForestConfig p;
    p.n_trees = n_trees;
    p.min_leaf = 5;
    p.max_depth = 2;
    p.criterion = Criterion::gini;
    p.resampling = resampling;
    p.subsample_rule = rule;
    ForestConfig o = p;
    o.max_depth = 0;
    o.criterion = Criterion::mse;
    return {p, o, FeatureSet::x_c, FeatureSet::x_c};
  }
};

// Fixed nuisance functions (oracle or deliberately misspecified).
struct FixedNuisanceSpec {
  std::function<NuisanceBundle(const Observation&)> eval;
};

using NuisanceSpec = std::variant<LearnedNuisanceSpec, FixedNuisanceSpec>;

// True nuisances of the interference design.
inline FixedNuisanceSpec oracle_interference_nuisance() {
  return {[](const Observation& o) -> NuisanceBundle {
    const double e = interference::propensity(o.c);
    return DrAteNuisance{interference::g1(o.x, o.c), e, interference::g0(o.x, o.c), 1.0 - e};
  }};
}

// True nuisances of the PLIV design.
inline FixedNuisanceSpec oracle_pliv_nuisance(const PlivConfig& cfg) {
  return {[cfg](const Observation& o) -> NuisanceBundle {
    using namespace pliv;
    if (cfg.instrument_is_treatment) {
      const double pw = normal_cdf(m_w(o.x));
      return PlivNuisance{cfg.theta0 * pw + h0(o.x), pw, pw};
    }
    const double pw = normal_cdf((cfg.strength * m_v(o.x) + m_w(o.x)) /
                                 std::sqrt(cfg.strength * cfg.strength + 1.0));
    return PlivNuisance{cfg.theta0 * pw + h0(o.x), pw, m_v(o.x)};
  }};
}

// ---------------------------------------------------------------- fitted nuisances

struct NuisancePartInfo {
  std::string name;
  std::size_t training_rows = 0;
  bool fallback = false;      // pooled mean used instead of the learner
  bool global_fallback = false;  // training subset empty; full-sample mean used
  double in_sample_mse = 0.0;
};

// One fitted component: a predictor, or a pooled-mean fallback.
struct NuisancePart {
  std::optional<Predictor> predictor;
  double fallback_value = 0.0;
  FeatureSet features = FeatureSet::x_c;
  NuisancePartInfo info;

  double operator()(const Observation& o) const {
    if (!predictor) return fallback_value;
    std::array<double, 2> buf{};
    write_features(o, features, std::span<double>(buf.data(), feature_count(features)));
    return predictor->predict(std::span<const double>(buf.data(), feature_count(features)));
  }
};

class FittedNuisance {
 public:
  FittedNuisance() = default;
  explicit FittedNuisance(FixedNuisanceSpec fixed) : fixed_(std::move(fixed)) {}
  FittedNuisance(MomentKind kind, std::vector<NuisancePart> parts)
      : kind_(kind), parts_(std::move(parts)) {}

  NuisanceBundle at(const Observation& o) const {
    if (fixed_) return fixed_->eval(o);
    if (kind_ == MomentKind::dr_ate) {
      const double e = parts_[0](o);
      return DrAteNuisance{parts_[1](o), e, parts_[2](o), 1.0 - e};
    }
    return PlivNuisance{parts_[0](o), parts_[1](o), parts_[2](o)};
  }

  bool is_fixed() const noexcept { return fixed_.has_value(); }
  bool any_fallback() const noexcept {
    return std::any_of(parts_.begin(), parts_.end(), [](const auto& p) { return p.info.fallback; });
  }
  std::span<const NuisancePart> parts() const noexcept { return parts_; }

 private:
  std::optional<FixedNuisanceSpec> fixed_;
  MomentKind kind_ = MomentKind::dr_ate;
  std::vector<NuisancePart> parts_;
};

namespace detail {

inline constexpr std::uint64_t kStreamNuisance = rng::tag("nuisance");
inline constexpr std::uint64_t kStreamFolds = rng::tag("folds");

inline std::size_t min_rows_for(const LearnerSpec& spec) {
  if (const auto* f = std::get_if<ForestConfig>(&spec)) return f->min_leaf;
  return 1;
}

inline LearnerSpec with_seed(LearnerSpec spec, std::uint64_t seed) {
  if (auto* f = std::get_if<ForestConfig>(&spec)) f->seed = seed;
  return spec;
}

using Target = double (*)(const Observation&);

inline double target_y(const Observation& o) { return o.y; }
inline double target_w(const Observation& o) { return static_cast<double>(o.w); }
inline double target_v(const Observation& o) { return o.v.value_or(0.0); }

struct PartRequest {
  std::string name;
  const LearnerSpec* spec;
  FeatureSet features;
  Target target;
  int arm;  // -1 = all units, else only units with W == arm
};

inline NuisancePart fit_part(const Dataset& d, std::span<const std::size_t> train,
                             const PartRequest& req, std::uint64_t seed, bool allow_fallback,
                             const NuisancePart* base,
                             const std::unordered_set<std::uint32_t>* changed) {
  std::vector<std::size_t> rows;
  rows.reserve(train.size());
  for (auto i : train) {
    if (req.arm < 0 || d.obs[i].w == req.arm) rows.push_back(i);
  }
  NuisancePart part;
  part.features = req.features;
  part.info.name = req.name;
  part.info.training_rows = rows.size();
  const auto nf = feature_count(req.features);
  if (rows.size() < min_rows_for(*req.spec)) {
    if (!allow_fallback) {
      throw DataError("nuisance '" + req.name + "' has " + std::to_string(rows.size()) +
                      " training rows, below the learner minimum");
    }
    part.info.fallback = true;
    double s = 0.0;
    std::size_t cnt = 0;
    if (!rows.empty()) {
      for (auto i : rows) s += req.target(d.obs[i]);
      cnt = rows.size();
    } else {
      part.info.global_fallback = true;
      for (const auto& o : d.obs) {
        if (req.arm < 0 || o.w == req.arm) {
          s += req.target(o);
          ++cnt;
        }
      }
    }
    part.fallback_value = cnt > 0 ? s / static_cast<double>(cnt) : 0.0;
    return part;
  }
  FeatureMatrix X(rows.size(), nf);
  std::vector<double> y(rows.size());
  std::vector<std::uint32_t> ids(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& o = d.obs[rows[k]];
    write_features(o, req.features, X.row(k));
    y[k] = req.target(o);
    ids[k] = static_cast<std::uint32_t>(rows[k]);
  }
  const auto spec = with_seed(*req.spec, seed);
  const auto* fc = std::get_if<ForestConfig>(&spec);
  if (fc != nullptr && base != nullptr && base->predictor && changed != nullptr) {
    part.predictor = fit_forest_reusing(X, y, *fc, ids, base->predictor->forest(), *changed);
  } else {
    part.predictor = fit_learner(spec, X, y, ids);
  }
  double sse = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double r = y[k] - part.predictor->predict(X.row(k));
    sse += r * r;
  }
  part.info.in_sample_mse = sse / static_cast<double>(rows.size());
  return part;
}

}  // namespace detail

// Fits every nuisance component on the units in `train`. With `base` and
// `changed`, forest components reuse trees of `base` untouched by `changed`.
inline FittedNuisance fit_nuisance(const Dataset& d, std::span<const std::size_t> train,
                                   const NuisanceSpec& spec, MomentKind kind, std::uint64_t seed,
                                   bool allow_fallback = false,
                                   const FittedNuisance* base = nullptr,
                                   const std::unordered_set<std::uint32_t>* changed = nullptr) {
  if (const auto* fixed = std::get_if<FixedNuisanceSpec>(&spec)) return FittedNuisance(*fixed);
  const auto& ls = std::get<LearnedNuisanceSpec>(spec);
  std::vector<detail::PartRequest> reqs;
  if (kind == MomentKind::dr_ate) {
    reqs = {{"propensity", &ls.propensity, ls.propensity_features, detail::target_w, -1},
            {"outcome_w1", &ls.outcome, ls.outcome_features, detail::target_y, 1},
            {"outcome_w0", &ls.outcome, ls.outcome_features, detail::target_y, 0}};
  } else {
    reqs = {{"ell_y", &ls.outcome, ls.outcome_features, detail::target_y, -1},
            {"ell_w", &ls.propensity, ls.propensity_features, detail::target_w, -1},
            {"ell_v", &ls.outcome, ls.outcome_features, detail::target_v, -1}};
  }
  std::vector<NuisancePart> parts;
  parts.reserve(reqs.size());
  for (std::size_t k = 0; k < reqs.size(); ++k) {
    const NuisancePart* bp = (base != nullptr && !base->is_fixed()) ? &base->parts()[k] : nullptr;
    parts.push_back(detail::fit_part(d, train, reqs[k],
                                     rng::derive(seed, detail::kStreamNuisance, k),
                                     allow_fallback, bp, changed));
  }
  return {kind, std::move(parts)};
}

// ---------------------------------------------------------------- affine solve

struct AffineSolution {
  std::vector<double> theta;
  double condition_number = 1.0;
  double relative_residual = 0.0;
};

// Solves (1/n) sum psi_i theta + nu_i = 0 for theta in R^p; psi is a flat
// sequence of row-major p x p blocks.
inline AffineSolution solve_affine_moment(std::span<const double> psi, std::span<const double> nu,
                                          std::size_t p) {
  if (p == 0 || nu.size() % p != 0 || psi.size() != nu.size() * p) {
    throw ArgumentError("moment arrays inconsistent with dimension p");
  }
  const auto n = nu.size() / p;
  if (n == 0) throw EstimationError("no observations to solve the moment equation");
  const auto P = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(P, P);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(P);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < p; ++r) {
      b(static_cast<Eigen::Index>(r)) += nu[i * p + r];
      for (std::size_t c = 0; c < p; ++c) {
        A(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) += psi[i * p * p + r * p + c];
      }
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(P - 1);
  const double cond = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
  if (!(smax > 0.0) || !(cond < 1e12)) {
    throw EstimationError("sum of psi is singular (condition number " + std::to_string(cond) + ")");
  }
  const Eigen::VectorXd theta = -svd.solve(b);
  AffineSolution out;
  out.theta.assign(theta.data(), theta.data() + theta.size());
  out.condition_number = cond;
  // Relative residual: |sum m_i| / (sum |psi_i theta| + sum |nu_i|).
  Eigen::VectorXd resid = A * theta + b;
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < p; ++r) {
      double pt = 0.0;
      for (std::size_t c = 0; c < p; ++c) pt += psi[i * p * p + r * p + c] * theta(static_cast<Eigen::Index>(c));
      scale += std::abs(pt) + std::abs(nu[i * p + r]);
    }
  }
  out.relative_residual = scale > 0.0 ? resid.norm() / scale : resid.norm();
  return out;
}

// ---------------------------------------------------------------- folds

struct FoldAssignment {
  std::vector<std::size_t> fold_of;              // per unit
  std::vector<std::vector<std::size_t>> folds;   // evaluation units, ascending
  std::vector<std::vector<std::size_t>> training;  // ascending

  std::vector<std::size_t> training_sizes() const {
    std::vector<std::size_t> s;
    for (const auto& t : training) s.push_back(t.size());
    return s;
  }
};

// Uniform random partition into K folds (sizes differ by at most one). The
// training set of fold k keeps units outside k at distance >= d_star from it.
inline FoldAssignment make_neighborhood_folds(const MetricSpace& space, std::size_t K,
                                              double d_star, std::uint64_t seed) {
  const auto n = space.size();
  if (K < 2) throw ArgumentError("folds must be >= 2");
  if (K > n) throw ArgumentError("more folds than units");
  if (!(d_star >= 0.0)) throw ArgumentError("exclusion distance must be >= 0");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng::Stream stream(seed, detail::kStreamFolds);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(stream.below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  FoldAssignment fa;
  fa.fold_of.resize(n);
  fa.folds.resize(K);
  for (std::size_t pos = 0; pos < n; ++pos) fa.fold_of[perm[pos]] = pos % K;
  for (std::size_t i = 0; i < n; ++i) fa.folds[fa.fold_of[i]].push_back(i);
  fa.training.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    auto& tr = fa.training[k];
    if (d_star <= 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        if (fa.fold_of[i] != k) tr.push_back(i);
      }
      continue;
    }
    if (space.kind() == SpaceKind::graph) {
      // Hop distances are integers: rho >= d_star  <=>  rho > ceil(d_star) - 1.
      const auto reach = static_cast<std::int32_t>(std::ceil(d_star)) - 1;
      const auto dist = space.multi_source_bfs(fa.folds[k], reach);
      for (std::size_t i = 0; i < n; ++i) {
        if (fa.fold_of[i] != k && dist[i] < 0) tr.push_back(i);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        if (fa.fold_of[i] == k) continue;
        const std::size_t one[1] = {i};
        if (space.set_distance(one, fa.folds[k]) >= d_star) tr.push_back(i);
      }
    }
  }
  return fa;
}

// ---------------------------------------------------------------- estimators

enum class EstimationMode { full_sample, neighborhood_crossfit };

struct EstimatorConfig {
  EstimationMode mode = EstimationMode::full_sample;
  std::size_t folds = 5;
  double exclusion_distance = 3.0;
  MomentModel moment;
  NuisanceSpec nuisance = LearnedNuisanceSpec::forests(Resampling::bootstrap, 500);
  std::uint64_t seed = 0;

  std::vector<std::string> validate() const {
    auto errs = moment.validate();
    if (mode == EstimationMode::neighborhood_crossfit) {
      if (folds < 2) errs.emplace_back("folds must be >= 2");
      if (!(exclusion_distance >= 0.0)) errs.emplace_back("exclusion_distance must be >= 0");
    }
    if (const auto* ls = std::get_if<LearnedNuisanceSpec>(&nuisance)) {
      for (const auto* s : {&ls->propensity, &ls->outcome}) {
        std::visit(
            [&](const auto& c) {
              if constexpr (!std::is_same_v<std::decay_t<decltype(c)>, ConstantSpec>) {
                for (auto& e : c.validate()) errs.push_back(e);
              }
            },
            *s);
      }
    } else if (!std::get<FixedNuisanceSpec>(nuisance).eval) {
      errs.emplace_back("fixed nuisance has no function");
    }
    return errs;
  }
};

struct FoldDiagnostics {
  std::size_t fold = 0;
  std::size_t eval_size = 0;
  std::size_t training_size = 0;
  double theta_hat = 0.0;
  double moment_residual = 0.0;
  bool fallback = false;
  std::vector<NuisancePartInfo> nuisances;
};

struct FitResult {
  double theta_hat = 0.0;
  std::vector<double> theta;  // full vector; theta_hat = theta[0]
  std::vector<std::size_t> fold_training_sizes;
  std::vector<FoldDiagnostics> folds;
  std::vector<NuisancePartInfo> nuisances;  // full-sample mode
  double moment_residual = 0.0;

  double mean_training_size() const {
    if (fold_training_sizes.empty()) return 0.0;
    double s = 0.0;
    for (auto v : fold_training_sizes) s += static_cast<double>(v);
    return s / static_cast<double>(fold_training_sizes.size());
  }
};

namespace detail {

inline std::vector<NuisancePartInfo> part_infos(const FittedNuisance& g) {
  std::vector<NuisancePartInfo> out;
  for (const auto& p : g.parts()) out.push_back(p.info);
  return out;
}

inline AffineSolution solve_on(const Dataset& d, std::span<const std::size_t> units,
                               const FittedNuisance& g, const MomentModel& model) {
  std::vector<double> psi(units.size()), nu(units.size());
  for (std::size_t k = 0; k < units.size(); ++k) {
    const auto& o = d.obs[units[k]];
    const auto m = model.evaluate(o, g.at(o));
    psi[k] = m.psi;
    nu[k] = m.nu;
  }
  return solve_affine_moment(psi, nu, 1);
}

inline void check_arms(const Dataset& d, const MomentModel& model) {
  if (d.size() == 0) throw DataError("dataset is empty");
  if (model.kind == MomentKind::dr_ate) {
    const auto t = d.treated_count();
    if (t == 0 || t == d.size()) throw DataError("a treatment arm is empty");
  }
}

}  // namespace detail

// Nuisances trained on every unit; moments evaluated in-sample.
inline FitResult fit_full_sample(const Dataset& d, const EstimatorConfig& cfg) {
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs);
  detail::check_arms(d, cfg.moment);
  std::vector<std::size_t> all(d.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto g = fit_nuisance(d, all, cfg.nuisance, cfg.moment.kind, cfg.seed);
  const auto sol = detail::solve_on(d, all, g, cfg.moment);
  FitResult r;
  r.theta = sol.theta;
  r.theta_hat = sol.theta.front();
  r.moment_residual = sol.relative_residual;
  r.nuisances = detail::part_infos(g);
  return r;
}

// Per-fold estimates from neighborhood-excluded training sets, averaged.
inline FitResult fit_crossfit(const Dataset& d, const EstimatorConfig& cfg,
                              const FoldAssignment* precomputed = nullptr) {
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs);
  if (cfg.folds < 2) throw ConfigError("folds must be >= 2");
  detail::check_arms(d, cfg.moment);
  if (!d.space) throw ArgumentError("dataset has no metric space");
  const FoldAssignment fa = precomputed != nullptr
                                ? *precomputed
                                : make_neighborhood_folds(*d.space, cfg.folds, cfg.exclusion_distance,
                                                          cfg.seed);
  const auto K = fa.folds.size();
  FitResult r;
  double acc = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto g = fit_nuisance(d, fa.training[k], cfg.nuisance, cfg.moment.kind,
                                rng::derive(cfg.seed, k), /*allow_fallback=*/true);
    const auto sol = detail::solve_on(d, fa.folds[k], g, cfg.moment);
    FoldDiagnostics fd;
    fd.fold = k;
    fd.eval_size = fa.folds[k].size();
    fd.training_size = fa.training[k].size();
    fd.theta_hat = sol.theta.front();
    fd.moment_residual = sol.relative_residual;
    fd.fallback = g.any_fallback();
    fd.nuisances = detail::part_infos(g);
    acc += fd.theta_hat;
    r.moment_residual = std::max(r.moment_residual, sol.relative_residual);
    r.fold_training_sizes.push_back(fd.training_size);
    r.folds.push_back(std::move(fd));
  }
  if (std::all_of(r.folds.begin(), r.folds.end(), [](const auto& f) { return f.fallback; })) {
    throw EstimationError("every fold's training set is too small to fit the nuisances");
  }
  r.theta_hat = acc / static_cast<double>(K);
  r.theta = {r.theta_hat};
  return r;
}

inline FitResult estimate(const Dataset& d, const EstimatorConfig& cfg) {
  return cfg.mode == EstimationMode::full_sample ? fit_full_sample(d, cfg) : fit_crossfit(d, cfg);
}

// ---------------------------------------------------------------- JSON

inline void to_json(nlohmann::json& j, const NuisancePartInfo& p) {
  j = {{"name", p.name},
       {"training_rows", p.training_rows},
       {"fallback", p.fallback},
       {"global_fallback", p.global_fallback},
       {"in_sample_mse", p.in_sample_mse}};
}

inline void to_json(nlohmann::json& j, const FoldDiagnostics& f) {
  j = {{"fold", f.fold},
       {"eval_size", f.eval_size},
       {"training_size", f.training_size},
       {"theta_hat", f.theta_hat},
       {"moment_residual", f.moment_residual},
       {"fallback", f.fallback},
       {"nuisances", f.nuisances}};
}

inline void to_json(nlohmann::json& j, const FitResult& r) {
  j = {{"theta_hat", r.theta_hat},
       {"theta", r.theta},
       {"moment_residual", r.moment_residual},
       {"fold_training_sizes", r.fold_training_sizes},
       {"folds", r.folds},
       {"nuisances", r.nuisances}};
}

}  // namespace nbdml
