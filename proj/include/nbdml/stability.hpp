#pragma once

// Neighborhood stability: how much the fitted moment moves when every
// observation near a pair (i, j) is replaced by an independent copy. Also
// closed-form bound checks for regularized ridge, SGD ridge, subsampled
// bagging rates, and neighborhood growth under several mixing regimes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "nbdml/dgp.hpp"
#include "nbdml/error.hpp"
#include "nbdml/estimator.hpp"
#include "nbdml/learners.hpp"
#include "nbdml/metric_space.hpp"
#include "nbdml/moments.hpp"
#include "nbdml/parallel.hpp"
#include "nbdml/rng.hpp"

namespace nbdml {

// ---------------------------------------------------------------- helpers

// OLS slope of log(y) on log(x). NaN when fewer than two points or any y <= 0.
inline double log_log_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("slope inputs differ in length");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k] > 0.0) || !(y[k] > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    mx += std::log(x[k]);
    my += std::log(y[k]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double dx = std::log(x[k]) - mx;
    sxy += dx * (std::log(y[k]) - my);
    sxx += dx * dx;
  }
  return sxx > 0.0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
}

namespace detail {

inline nlohmann::json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace detail

// ---------------------------------------------------------------- generator

// Produces a network for size n, then independent datasets on it. Copies Z,
// Z~ and Z* are three calls with different seeds on the same network.
struct StabilityGenerator {
  std::function<std::shared_ptr<const MetricSpace>(std::size_t n, std::uint64_t seed)> network;
  std::function<Dataset(std::shared_ptr<const MetricSpace> space, std::uint64_t seed)> data;
};

inline StabilityGenerator interference_generator(double delta,
                                                 FeatureMap map = FeatureMap::literal) {
  return {[delta](std::size_t n, std::uint64_t seed) {
            return std::make_shared<const MetricSpace>(gen_er_network(n, delta, seed));
          },
          [delta, map](std::shared_ptr<const MetricSpace> space, std::uint64_t seed) {
            InterferenceDgpConfig cfg;
            cfg.n = space->size();
            cfg.delta = std::min(delta, static_cast<double>(cfg.n));
            cfg.seed = seed;
            cfg.feature_map = map;
            return gen_interference_data(cfg, std::move(space));
          }};
}

inline StabilityGenerator pliv_generator(PlivConfig pc) {
  return {[](std::size_t n, std::uint64_t) {
            return std::make_shared<const MetricSpace>(MetricSpace::empty_graph(n));
          },
          [pc](std::shared_ptr<const MetricSpace> space, std::uint64_t seed) {
            auto d = gen_pliv_data(space->size(), seed, pc);
            d.space = std::move(space);
            return d;
          }};
}

// ---------------------------------------------------------------- measurement

struct StabilityConfig {
  double radius = 3.0;  // r_n
  std::size_t diagonal_pairs = 10;
  std::size_t offdiagonal_pairs = 10;
  bool all_diagonal = false;  // probe every (i, i)
  std::size_t mc_reps = 50;
  MomentModel moment;
  LearnedNuisanceSpec learner = LearnedNuisanceSpec::forests(Resampling::subsample, 100);
  // When set, every forest in `learner` uses ceil(trees_per_unit * n) trees.
  std::optional<double> trees_per_unit;
  bool degenerate_copies = false;  // Z~ = Z, a coupling sanity check
  double slope_threshold = -0.45;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  std::vector<std::string> validate() const {
    auto errs = moment.validate();
    if (!(radius >= 0.0)) errs.emplace_back("radius must be >= 0");
    if (mc_reps == 0) errs.emplace_back("mc_reps must be >= 1");
    if (!all_diagonal && diagonal_pairs + offdiagonal_pairs == 0) {
      errs.emplace_back("at least one pair must be probed");
    }
    if (trees_per_unit && !(*trees_per_unit > 0.0)) errs.emplace_back("trees_per_unit must be > 0");
    return errs;
  }
};

struct StabilityRecord {
  std::size_t n = 0;
  std::size_t pairs = 0;
  std::size_t trees = 0;
  double mean_swap_size = 0.0;
  double max_rms_in_sample = 0.0;  // Z_i, the observation itself
  double max_rms_fresh = 0.0;      // Z*_i, an independent copy
  double sqrt_n_rms_in_sample = 0.0;
  double sqrt_n_rms_fresh = 0.0;
};

struct StabilityReport {
  std::vector<StabilityRecord> records;
  double slope_in_sample = std::numeric_limits<double>::quiet_NaN();
  double slope_fresh = std::numeric_limits<double>::quiet_NaN();
  double slope_threshold = -0.45;
  bool identically_zero = false;
  std::vector<std::string> warnings;

  // Worst of the two slopes.
  double slope() const {
    if (std::isnan(slope_in_sample) || std::isnan(slope_fresh)) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    return std::max(slope_in_sample, slope_fresh);
  }

  bool stable() const { return identically_zero || slope() <= slope_threshold; }
};

namespace detail {

inline constexpr std::uint64_t kStreamStabNet = rng::tag("stability-network");
inline constexpr std::uint64_t kStreamStabPairs = rng::tag("stability-pairs");
inline constexpr std::uint64_t kStreamStabRep = rng::tag("stability-rep");

inline LearnedNuisanceSpec scale_trees(LearnedNuisanceSpec spec, std::size_t trees) {
  for (auto* s : {&spec.propensity, &spec.outcome}) {
    if (auto* f = std::get_if<ForestConfig>(s)) f->n_trees = trees;
  }
  return spec;
}

inline std::size_t forest_trees(const LearnedNuisanceSpec& spec) {
  if (const auto* f = std::get_if<ForestConfig>(&spec.outcome)) return f->n_trees;
  if (const auto* f = std::get_if<ForestConfig>(&spec.propensity)) return f->n_trees;
  return 0;
}

struct Probe {
  std::size_t pair;   // index into the swap sets
  std::size_t unit;   // where the moment is evaluated
};

}  // namespace detail

// For each n: fixes a network, picks pairs, and over mc_reps draws of
// (Z, Z~, Z*) refits the nuisances after swapping N(i,r) u N(j,r) to Z~, with
// the learner's randomness shared between the two fits. Off-diagonal pairs
// are probed at both endpoints.
inline StabilityReport measure_neighborhood_stability(const StabilityGenerator& gen,
                                                      const StabilityConfig& cfg,
                                                      std::span<const std::size_t> n_grid) {
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs);
  if (n_grid.empty()) throw ArgumentError("n_grid is empty");
  StabilityReport report;
  report.slope_threshold = cfg.slope_threshold;
  for (const auto n : n_grid) {
    if (n < 2) throw ArgumentError("every n in the grid must be >= 2");
    const auto space = gen.network(n, rng::derive(cfg.seed, detail::kStreamStabNet, n));
    if (space->size() != n) throw DataError("generator produced a network of the wrong size");
    const auto learner = cfg.trees_per_unit
                             ? detail::scale_trees(cfg.learner, static_cast<std::size_t>(std::ceil(
                                                                    *cfg.trees_per_unit * n)))
                             : cfg.learner;

    // Pairs and their swap sets.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    rng::Stream pick(rng::derive(cfg.seed, detail::kStreamStabPairs, n), 0);
    if (cfg.all_diagonal) {
      for (std::size_t i = 0; i < n; ++i) pairs.emplace_back(i, i);
    } else {
      std::vector<std::size_t> units(n);
      std::iota(units.begin(), units.end(), std::size_t{0});
      std::shuffle(units.begin(), units.end(), pick);
      for (std::size_t k = 0; k < std::min(cfg.diagonal_pairs, n); ++k) {
        pairs.emplace_back(units[k], units[k]);
      }
    }
    for (std::size_t k = 0; k < cfg.offdiagonal_pairs; ++k) {
      const auto i = static_cast<std::size_t>(pick.below(n));
      auto j = static_cast<std::size_t>(pick.below(n - 1));
      if (j >= i) ++j;
      pairs.emplace_back(i, j);
    }
    std::vector<std::vector<std::size_t>> swaps;
    std::vector<detail::Probe> probes;
    double swap_total = 0.0;
    bool covers_all = false;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [i, j] = pairs[p];
      swaps.push_back(space->neighborhood_union(i, j, cfg.radius));
      swap_total += static_cast<double>(swaps.back().size());
      covers_all = covers_all || swaps.back().size() == n;
      probes.push_back({p, i});
      if (i != j) probes.push_back({p, j});
    }
    if (covers_all) {
      report.warnings.push_back("n=" + std::to_string(n) +
                                ": a swap set covers every unit (radius exceeds the diameter)");
    }

    // sq[rep][probe] = squared differences {psi in-sample, nu in-sample, psi fresh, nu fresh}.
    std::vector<std::vector<std::array<double, 4>>> sq(cfg.mc_reps);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    parallel_for(cfg.mc_reps, cfg.workers, [&](std::size_t r) {
      const auto key = rng::derive(cfg.seed, detail::kStreamStabRep, n, r);
      const auto z = gen.data(space, rng::derive(key, 0));
      const auto zt = cfg.degenerate_copies ? z : gen.data(space, rng::derive(key, 1));
      const auto zs = gen.data(space, rng::derive(key, 2));
      const auto learner_seed = rng::derive(key, 3);
      const auto base = fit_nuisance(z, all, learner, cfg.moment.kind, learner_seed);
      auto& out = sq[r];
      out.assign(probes.size(), {0.0, 0.0, 0.0, 0.0});
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        Dataset swapped = z;
        std::unordered_set<std::uint32_t> changed;
        for (auto k : swaps[p]) {
          swapped.obs[k] = zt.obs[k];
          changed.insert(static_cast<std::uint32_t>(k));
        }
        const auto pert = fit_nuisance(swapped, all, learner, cfg.moment.kind, learner_seed,
                                       false, &base, &changed);
        for (std::size_t q = 0; q < probes.size(); ++q) {
          if (probes[q].pair != p) continue;
          const auto u = probes[q].unit;
          const auto a = cfg.moment.evaluate(z.obs[u], base.at(z.obs[u]));
          const auto b = cfg.moment.evaluate(z.obs[u], pert.at(z.obs[u]));
          const auto fa = cfg.moment.evaluate(zs.obs[u], base.at(zs.obs[u]));
          const auto fb = cfg.moment.evaluate(zs.obs[u], pert.at(zs.obs[u]));
          out[q] = {(a.psi - b.psi) * (a.psi - b.psi), (a.nu - b.nu) * (a.nu - b.nu),
                    (fa.psi - fb.psi) * (fa.psi - fb.psi), (fa.nu - fb.nu) * (fa.nu - fb.nu)};
        }
      }
    });

    StabilityRecord rec;
    rec.n = n;
    rec.pairs = pairs.size();
    rec.trees = detail::forest_trees(learner);
    rec.mean_swap_size = swap_total / static_cast<double>(pairs.size());
    for (std::size_t q = 0; q < probes.size(); ++q) {
      std::array<double, 4> acc{};
      for (std::size_t r = 0; r < cfg.mc_reps; ++r) {
        for (int c = 0; c < 4; ++c) acc[c] += sq[r][q][c];
      }
      for (auto& v : acc) v = std::sqrt(v / static_cast<double>(cfg.mc_reps));
      rec.max_rms_in_sample = std::max({rec.max_rms_in_sample, acc[0], acc[1]});
      rec.max_rms_fresh = std::max({rec.max_rms_fresh, acc[2], acc[3]});
    }
    const double rn = std::sqrt(static_cast<double>(n));
    rec.sqrt_n_rms_in_sample = rn * rec.max_rms_in_sample;
    rec.sqrt_n_rms_fresh = rn * rec.max_rms_fresh;
    report.records.push_back(rec);
  }
  std::vector<double> ns, in, fr;
  bool zero = true;
  for (const auto& r : report.records) {
    ns.push_back(static_cast<double>(r.n));
    in.push_back(r.max_rms_in_sample);
    fr.push_back(r.max_rms_fresh);
    zero = zero && r.max_rms_in_sample == 0.0 && r.max_rms_fresh == 0.0;
  }
  report.identically_zero = zero;
  report.slope_in_sample = log_log_slope(ns, in);
  report.slope_fresh = log_log_slope(ns, fr);
  return report;
}

inline void to_json(nlohmann::json& j, const StabilityRecord& r) {
  j = {{"n", r.n},
       {"pairs", r.pairs},
       {"trees", r.trees},
       {"mean_swap_size", r.mean_swap_size},
       {"max_rms_in_sample", r.max_rms_in_sample},
       {"max_rms_fresh", r.max_rms_fresh},
       {"sqrt_n_rms_in_sample", r.sqrt_n_rms_in_sample},
       {"sqrt_n_rms_fresh", r.sqrt_n_rms_fresh}};
}

inline void to_json(nlohmann::json& j, const StabilityReport& r) {
  j = {{"records", r.records},
       {"slope_in_sample", detail::finite_or_null(r.slope_in_sample)},
       {"slope_fresh", detail::finite_or_null(r.slope_fresh)},
       {"slope_threshold", r.slope_threshold},
       {"identically_zero", r.identically_zero},
       {"stable", r.stable()},
       {"warnings", r.warnings}};
}

inline void write_stability_csv(std::ostream& os, const StabilityReport& r) {
  os << "n,pairs,trees,mean_swap_size,max_rms_in_sample,max_rms_fresh,"
        "sqrt_n_rms_in_sample,sqrt_n_rms_fresh\n";
  for (const auto& x : r.records) {
    os << x.n << ',' << x.pairs << ',' << x.trees << ',' << x.mean_swap_size << ','
       << x.max_rms_in_sample << ',' << x.max_rms_fresh << ',' << x.sqrt_n_rms_in_sample << ','
       << x.sqrt_n_rms_fresh << '\n';
  }
}

// ---------------------------------------------------------------- bound checks

struct BoundCheck {
  double measured = 0.0;
  double bound = 0.0;
  bool holds = true;
  bool in_scope = true;  // the theorem's side conditions hold
  std::size_t replaced = 0;
};

// sup_x sqrt(k(x, x)) over |x| <= feature_radius.
inline double kernel_sup(const RidgeKernelConfig& cfg, double feature_radius) {
  return cfg.kernel == KernelKind::linear ? feature_radius : 1.0;
}

// Lipschitz constant of the squared loss (y - g)^2 in g on the range of the
// ridge solution: |g| <= C_kappa |g|_k <= C_kappa y_bound / sqrt(lambda).
inline double squared_loss_sigma(double y_bound, double c_kappa, double lambda) {
  return 2.0 * (y_bound + c_kappa * y_bound / std::sqrt(lambda));
}

struct RidgeBoundParams {
  double feature_radius = 1.0;  // |x| <= R on the domain
  double y_bound = 1.0;
  // Lipschitz constant of the loss; defaults to squared_loss_sigma.
  std::optional<double> sigma;
  std::size_t grid_points = 101;  // per dimension, gaussian kernel only
};

// Refits the ridge after `replacement` and compares sup_x |g(x) - g'(x)| over
// the ball |x| <= R with C_kappa^2 sigma / (2 lambda n) * (#replaced).
inline BoundCheck check_prop2_bound(const FeatureMatrix& X, std::span<const double> y,
                                    const std::map<std::size_t, TrainingRow>& replacement,
                                    const RidgeKernelConfig& cfg, const RidgeBoundParams& p) {
  if (!std::isfinite(p.feature_radius) || !(p.feature_radius > 0.0)) {
    throw ConfigError("feature domain must be bounded for the kernel constant to exist");
  }
  if (!(p.y_bound > 0.0)) throw ConfigError("y_bound must be > 0");
  auto inside = [&](std::span<const double> x, double t) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s) <= p.feature_radius * (1 + 1e-12) && std::abs(t) <= p.y_bound;
  };
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!inside(X.row(i), y[i])) throw ArgumentError("training row outside the declared domain");
  }
  for (const auto& [k, row] : replacement) {
    if (!inside(row.features, row.target)) throw ArgumentError("replacement outside the declared domain");
  }
  const auto n = y.size();
  const double ck = kernel_sup(cfg, p.feature_radius);
  BoundCheck out;
  out.replaced = replacement.size();
  const double sigma = p.sigma ? *p.sigma : squared_loss_sigma(p.y_bound, ck, cfg.lambda);
  out.bound = ck * ck * sigma /
              (2.0 * cfg.lambda * static_cast<double>(n)) * static_cast<double>(replacement.size());
  const auto g = fit_ridge_closed(X, y, cfg);
  const auto h = retrain_on_perturbed(cfg, X, y, replacement);
  if (cfg.kernel == KernelKind::linear) {
    const auto& a = g.linear()->coef;
    const auto& b = h.linear()->coef;
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    out.measured = p.feature_radius * std::sqrt(s);
  } else {
    const auto d = X.cols;
    if (d > 2) throw ArgumentError("grid sup is only available for dimension <= 2");
    const auto G = std::max<std::size_t>(p.grid_points, 2);
    std::vector<double> x(d);
    std::size_t total = 1;
    for (std::size_t k = 0; k < d; ++k) total *= G;
    for (std::size_t idx = 0; idx < total; ++idx) {
      auto rem = idx;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        x[k] = -p.feature_radius + 2.0 * p.feature_radius * static_cast<double>(rem % G) /
                                       static_cast<double>(G - 1);
        rem /= G;
        s += x[k] * x[k];
      }
      if (std::sqrt(s) > p.feature_radius) continue;
      out.measured = std::max(out.measured, std::abs(g.predict(x) - h.predict(x)));
    }
  }
  out.holds = out.measured <= out.bound;
  return out;
}

// Swaps N(i,r) u N(j,r) of (X, y) for the rows of (Xt, yt), runs SGD on both,
// and compares |theta - theta'| with (2L/beta) n^-a |N(i,r) u N(j,r)|.
inline BoundCheck check_prop3_bound(const FeatureMatrix& X, std::span<const double> y,
                                    const FeatureMatrix& Xt, std::span<const double> yt,
                                    std::size_t i, std::size_t j, const SgdConfig& cfg,
                                    const MetricSpace& space, double radius) {
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs);
  const auto n = y.size();
  if (space.size() != n || yt.size() != n || Xt.rows() != n || X.rows() != n || Xt.cols != X.cols) {
    throw ArgumentError("data, copy and space sizes differ");
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (const auto* m : {&X, &Xt}) {
      double s = (m == &X ? y[k] * y[k] : yt[k] * yt[k]);
      for (double v : m->row(k)) s += v * v;
      if (std::sqrt(s) > cfg.feature_radius * (1 + 1e-12)) {
        throw ArgumentError("row " + std::to_string(k) + " has |(y, x)| above feature_radius");
      }
    }
  }
  const auto swap = space.neighborhood_union(i, j, radius);
  std::map<std::size_t, TrainingRow> rep;
  for (auto k : swap) {
    const auto row = Xt.row(k);
    rep[k] = {{row.begin(), row.end()}, yt[k]};
  }
  BoundCheck out;
  out.replaced = swap.size();
  out.in_scope = cfg.side_condition_holds(n);
  out.bound = 2.0 * cfg.lip / cfg.beta * std::pow(static_cast<double>(n), -cfg.a) *
              static_cast<double>(swap.size());
  const auto a = sgd_ridge_coefficients(X, y, cfg);
  const auto b = retrain_on_perturbed(cfg, X, y, rep).linear()->coef;
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  out.measured = std::sqrt(s);
  out.holds = out.measured <= out.bound;
  return out;
}

// ---------------------------------------------------------------- rate conditions

struct RateCheckInputs {
  std::function<double(double n)> m;       // subsample size
  std::function<double(double n)> trees;   // B
  std::function<double(double n)> n_star;  // max_i |N(i, r_n)|
  double r = 2.0;
  double s = 8.0;
  double k = 8.0;
};

struct RateRow {
  double n = 0, m = 0, trees = 0, n_star = 0;
  double size_rate = 0;   // m N* / sqrt(n)
  double tree_rate = 0;   // B^-1 (m N*)^(2/k) n^(1 - 2/k)
  double nbhd_rate = 0;   // N* / sqrt(n)
};

struct RateReport {
  std::vector<RateRow> rows;
  double size_slope = 0, tree_slope = 0, nbhd_slope = 0;
  bool size_condition = false;   // m N* = o(sqrt n)
  bool tree_condition = false;   // second sequence -> 0
  bool nbhd_condition = false;   // N*/sqrt(n) = O(n^-c), c > 0
};

// Evaluates the bagging rate sequences on the grid; a condition is taken to
// hold when its sequence has a negative log-log trend.
inline RateReport check_prop4_rates(const RateCheckInputs& in, std::span<const double> n_grid) {
  std::vector<std::string> errs;
  if (!in.m || !in.trees || !in.n_star) errs.emplace_back("m, trees and n_star must all be set");
  if (!(in.r > 0.0)) errs.emplace_back("r must be > 0");
  if (!(in.s >= 2 * in.r) || !(in.k >= 2 * in.r)) errs.emplace_back("s and k must be >= 2r");
  if (std::abs(1.0 / in.s + 1.0 / in.k - 1.0 / (2.0 * in.r)) > 1e-12) {
    errs.emplace_back("exponents violate 1/s + 1/k = 1/(2r)");
  }
  if (n_grid.size() < 2) errs.emplace_back("n_grid needs at least two sizes");
  if (!errs.empty()) throw ConfigError(errs);
  RateReport rep;
  std::vector<double> a, b, c;
  for (double n : n_grid) {
    RateRow row;
    row.n = n;
    row.m = in.m(n);
    row.trees = in.trees(n);
    row.n_star = in.n_star(n);
    const double p = row.m * row.n_star;
    row.size_rate = p / std::sqrt(n);
    row.tree_rate = std::pow(p, 2.0 / in.k) * std::pow(n, 1.0 - 2.0 / in.k) / row.trees;
    row.nbhd_rate = row.n_star / std::sqrt(n);
    a.push_back(row.size_rate);
    b.push_back(row.tree_rate);
    c.push_back(row.nbhd_rate);
    rep.rows.push_back(row);
  }
  std::vector<double> ns(n_grid.begin(), n_grid.end());
  rep.size_slope = log_log_slope(ns, a);
  rep.tree_slope = log_log_slope(ns, b);
  rep.nbhd_slope = log_log_slope(ns, c);
  rep.size_condition = rep.size_slope < 0.0;
  rep.tree_condition = rep.tree_slope < 0.0;
  rep.nbhd_condition = rep.nbhd_slope < 0.0;
  return rep;
}

// Largest r-neighborhood of a space.
inline double max_neighborhood_size(const MetricSpace& space, double r) {
  return static_cast<double>(space.neighborhood_stats(r).max_size);
}

enum class MixingRegime { exponential, polynomial, m_dependent };

struct GrowthMixingParams {
  double alpha = 1.0;  // mixing decay rate
  double a = 1.0;      // radius scale
  double growth = 0.0; // delta for exponential growth, d for spatial dimension
  double m = 3.0;      // fixed radius for m-dependence
};

struct GrowthRow {
  double n = 0, radius = 0, avg_size = 0, ratio = 0;  // ratio = avg / sqrt(n)
};

struct GrowthReport {
  MixingRegime regime = MixingRegime::m_dependent;
  double analytic_lhs = 0.0;  // a * growth / alpha
  bool analytic_holds = true; // lhs <= 0.5
  std::vector<GrowthRow> rows;
  double ratio_slope = 0.0;
  bool bounded = false;       // non-increasing trend of avg/sqrt(n)
  bool decreasing = false;    // strictly decreasing along the grid
};

inline double regime_radius(MixingRegime regime, const GrowthMixingParams& p, double n) {
  switch (regime) {
    case MixingRegime::exponential:
      return p.a * std::log(n) / p.alpha;
    case MixingRegime::polynomial:
      return std::pow(n, p.a / p.alpha);
    case MixingRegime::m_dependent:
      return p.m;
  }
  return p.m;
}

inline GrowthReport check_growth_mixing_tradeoff(
    MixingRegime regime, const GrowthMixingParams& p,
    const std::function<MetricSpace(std::size_t n)>& space_for, std::span<const std::size_t> n_grid) {
  GrowthReport rep;
  rep.regime = regime;
  if (regime != MixingRegime::m_dependent) {
    rep.analytic_lhs = p.a * p.growth / p.alpha;
    rep.analytic_holds = rep.analytic_lhs <= 0.5 + 1e-12;
  }
  std::vector<double> ns, ratios;
  for (auto n : n_grid) {
    GrowthRow row;
    row.n = static_cast<double>(n);
    row.radius = regime_radius(regime, p, row.n);
    if (space_for) {
      const auto space = space_for(n);
      row.avg_size = space.neighborhood_stats(row.radius).avg_size;
      row.ratio = row.avg_size / std::sqrt(row.n);
      ns.push_back(row.n);
      ratios.push_back(row.ratio);
    }
    rep.rows.push_back(row);
  }
  if (!ns.empty()) {
    rep.ratio_slope = log_log_slope(ns, ratios);
    rep.bounded = !(rep.ratio_slope > 0.0);
    rep.decreasing = true;
    for (std::size_t k = 1; k < ratios.size(); ++k) {
      rep.decreasing = rep.decreasing && ratios[k] < ratios[k - 1];
    }
  }
  return rep;
}

}  // namespace nbdml
