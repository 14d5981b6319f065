#pragma once

// Synthetic data: the Erdos-Renyi network-interference design and an i.i.d.
// partially linear IV design with known nuisances.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nbdml/error.hpp"
#include "nbdml/metric_space.hpp"
#include "nbdml/rng.hpp"

namespace nbdml {

struct Observation {
  double y = 0.0;
  int w = 0;
  double x = 0.0;
  double c = 0.0;
  std::optional<double> v;  // instrument (PLIV only)
};

// Per-unit ground truth kept for oracle nuisances and tests.
struct GroundTruth {
  std::vector<double> mu1;         // E[Y | W=1, X, C]
  std::vector<double> mu0;         // E[Y | W=0, X, C]
  std::vector<double> propensity;  // P(W=1 | X, C)
  std::vector<double> eps;
  std::vector<double> ell_y;  // PLIV: E[Y|X], E[W|X], E[V|X]
  std::vector<double> ell_w;
  std::vector<double> ell_v;
  std::optional<double> theta0;
};

struct Dataset {
  std::vector<Observation> obs;
  std::shared_ptr<const MetricSpace> space;
  std::optional<GroundTruth> truth;

  std::size_t size() const noexcept { return obs.size(); }

  std::size_t treated_count() const noexcept {
    std::size_t t = 0;
    for (const auto& o : obs) t += static_cast<std::size_t>(o.w);
    return t;
  }
};

// How X_i aggregates neighbour variables.
enum class FeatureMap {
  literal,           // mean of (W_j + (1 - W_j)) C_j
  treated_fraction,  // mean of W_j; sensitivity option only
};

struct InterferenceDgpConfig {
  std::size_t n = 500;
  double delta = 3.0;
  std::uint64_t seed = 0;
  bool retain_truth = false;
  FeatureMap feature_map = FeatureMap::literal;

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (n == 0) errs.emplace_back("n must be >= 1");
    if (!(delta >= 0.0)) errs.emplace_back("delta must be >= 0");
    if (n > 0 && delta / static_cast<double>(n) > 1.0) {
      errs.emplace_back("link probability delta/n = " + std::to_string(delta / static_cast<double>(n)) +
                        " exceeds 1");
    }
    return errs;
  }
};

namespace interference {

inline constexpr double kEpsHalfWidth = 0.17320508075688773;  // sqrt(0.12) / 2

inline double propensity(double c) noexcept {
  if (c < 0.33) return 0.15;
  if (c < 0.66) return 0.5;
  return 0.85;
}

// Outcome functions transcribed term by term, including the C < -0.2
// branches that are unreachable for C in [0, 1].
inline double g1(double x, double c) noexcept {
  const double hi_c = c >= -0.2 ? 1.0 : 0.0;
  const double lo_c = 1.0 - hi_c;
  return 1.5 * ((x >= 0.5 && x < 0.7) ? hi_c : 0.0) + 4.0 * (x >= 0.7 ? hi_c : 0.0) +
         0.5 * (x >= 0.5 ? lo_c : 0.0) + 3.5 * (x < 0.5 ? hi_c : 0.0) +
         2.5 * (x < 0.5 ? lo_c : 0.0);
}

inline double g0(double x, double c) noexcept {
  const bool hx = x >= 0.4;
  const bool hc = c >= 0.2;
  if (hx) return hc ? 0.5 : -0.75;
  return hc ? 0.25 : -0.5;
}

inline constexpr std::uint64_t kStreamNet = rng::tag("er-network");
inline constexpr std::uint64_t kStreamC = rng::tag("covariate");
inline constexpr std::uint64_t kStreamEps = rng::tag("noise");
inline constexpr std::uint64_t kStreamW = rng::tag("treatment");
inline constexpr std::uint64_t kStreamAte = rng::tag("true-ate");

}  // namespace interference

// G(n, delta/n) by geometric skipping over the lower triangle; O(n + edges).
inline MetricSpace gen_er_network(std::size_t n, double delta, std::uint64_t seed) {
  if (n == 0) return MetricSpace::empty_graph(0);
  const double p = delta / static_cast<double>(n);
  if (!(p >= 0.0) || p > 1.0) {
    throw ArgumentError("link probability delta/n must lie in [0,1], got " + std::to_string(p));
  }
  std::vector<MetricSpace::Edge> edges;
  if (p == 0.0 || n < 2) return MetricSpace::graph(n, edges);
  if (p == 1.0) {
    edges.reserve(n * (n - 1) / 2);
    for (std::size_t v = 1; v < n; ++v) {
      for (std::size_t w = 0; w < v; ++w) edges.emplace_back(v, w);
    }
    return MetricSpace::graph(n, edges);
  }
  edges.reserve(static_cast<std::size_t>(delta * static_cast<double>(n) * 0.6) + 16);
  rng::Stream stream(seed, interference::kStreamNet);
  const double log_q = std::log1p(-p);
  std::int64_t v = 1;
  std::int64_t w = -1;
  const auto nn = static_cast<std::int64_t>(n);
  while (v < nn) {
    const double r = stream.uniform();
    const double skip = std::floor(std::log1p(-r) / log_q);
    w += 1 + (skip > 4e18 ? static_cast<std::int64_t>(4e18) : static_cast<std::int64_t>(skip));
    while (w >= v && v < nn) {
      w -= v;
      ++v;
    }
    if (v < nn) edges.emplace_back(static_cast<std::size_t>(v), static_cast<std::size_t>(w));
  }
  return MetricSpace::graph(n, edges);
}

// Draws (C, eps, W) per unit from counter substreams, then X and Y.
inline Dataset gen_interference_data(const InterferenceDgpConfig& config,
                                     std::shared_ptr<const MetricSpace> space) {
  if (!space) throw ArgumentError("space is null");
  if (space->size() != config.n) {
    throw ArgumentError("space has " + std::to_string(space->size()) + " nodes, config n=" +
                        std::to_string(config.n));
  }
  using namespace interference;
  const auto n = config.n;
  Dataset d;
  d.space = std::move(space);
  d.obs.resize(n);
  std::vector<double> eps(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& o = d.obs[i];
    o.c = rng::uniform(config.seed, kStreamC, i);
    eps[i] = (2.0 * rng::uniform(config.seed, kStreamEps, i) - 1.0) * kEpsHalfWidth;
    o.w = rng::uniform(config.seed, kStreamW, i) < propensity(o.c) ? 1 : 0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = d.space->neighbors(i);
    double x = 0.0;
    if (!nb.empty()) {
      for (auto j : nb) {
        const auto& oj = d.obs[j];
        x += config.feature_map == FeatureMap::literal
                 ? (oj.w + (1 - oj.w)) * oj.c
                 : static_cast<double>(oj.w);
      }
      x /= static_cast<double>(nb.size());
    }
    d.obs[i].x = x;
  }
  GroundTruth truth;
  if (config.retain_truth) {
    truth.mu1.resize(n);
    truth.mu0.resize(n);
    truth.propensity.resize(n);
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& o = d.obs[i];
    const double m1 = g1(o.x, o.c);
    const double m0 = g0(o.x, o.c);
    o.y = o.w * m1 + (1 - o.w) * m0 + eps[i];
    if (config.retain_truth) {
      truth.mu1[i] = m1;
      truth.mu0[i] = m0;
      truth.propensity[i] = propensity(o.c);
    }
  }
  if (config.retain_truth) {
    truth.eps = std::move(eps);
    d.truth = std::move(truth);
  }
  return d;
}

// Network and data from one seed (network stream and unit streams are disjoint).
inline Dataset gen_interference_dataset(const InterferenceDgpConfig& config) {
  if (auto errs = config.validate(); !errs.empty()) throw ConfigError(errs);
  auto space = std::make_shared<const MetricSpace>(
      gen_er_network(config.n, config.delta, config.seed));
  return gen_interference_data(config, std::move(space));
}

struct TrueAte {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t reps = 0;
};

// Monte Carlo theta_0 = E[(1/n) sum g1(X_i,C_i) - g0(X_i,C_i)] over fresh
// networks and covariates. The noise term never enters, so it is not drawn.
inline TrueAte true_ate(const InterferenceDgpConfig& config, std::size_t reps) {
  if (reps == 0) throw ArgumentError("true_ate needs reps >= 1");
  if (auto errs = config.validate(); !errs.empty()) throw ConfigError(errs);
  using namespace interference;
  const auto n = config.n;
  double sum = 0.0, sumsq = 0.0;
  std::vector<double> c(n), wv(n);
  for (std::size_t r = 0; r < reps; ++r) {
    const auto key = rng::derive(config.seed, kStreamAte, r);
    const auto net = gen_er_network(n, config.delta, key);
    for (std::size_t i = 0; i < n; ++i) {
      c[i] = rng::uniform(key, kStreamC, i);
      wv[i] = rng::uniform(key, kStreamW, i) < propensity(c[i]) ? 1.0 : 0.0;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto nb = net.neighbors(i);
      double x = 0.0;
      if (!nb.empty()) {
        for (auto j : nb) {
          x += config.feature_map == FeatureMap::literal ? (wv[j] + (1.0 - wv[j])) * c[j] : wv[j];
        }
        x /= static_cast<double>(nb.size());
      }
      acc += g1(x, c[i]) - g0(x, c[i]);
    }
    const double mean = acc / static_cast<double>(n);
    sum += mean;
    sumsq += mean * mean;
  }
  TrueAte out;
  out.reps = reps;
  out.value = sum / static_cast<double>(reps);
  if (reps > 1) {
    const double var = (sumsq - sum * out.value) / static_cast<double>(reps - 1);
    out.std_error = std::sqrt(std::max(var, 0.0) / static_cast<double>(reps));
  }
  return out;
}

// Partially linear IV with binary treatment:
//   V = (x - 1/2) + u,   W = 1{s V + m_w(x) + eta > 0},   Y = theta0 W + sin(2 pi x) + eps,
//   eps = rho eta + sqrt(1 - rho^2) e,  u, eta, e ~ N(0,1), x, c ~ U[0,1].
// With instrument_is_treatment, W = 1{m_w(x) + eta > 0}, V = W and rho = 0.
struct PlivConfig {
  double theta0 = 0.5;
  double strength = 1.0;
  double endogeneity = 0.5;
  double noise_scale = 0.5;
  bool instrument_is_treatment = false;

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (!(endogeneity >= -1.0 && endogeneity <= 1.0)) errs.emplace_back("endogeneity must lie in [-1,1]");
    if (!(noise_scale >= 0.0)) errs.emplace_back("noise_scale must be >= 0");
    return errs;
  }
};

namespace pliv {

inline double normal_cdf(double z) noexcept { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
inline double h0(double x) noexcept { return std::sin(2.0 * std::numbers::pi * x); }
inline double m_v(double x) noexcept { return x - 0.5; }
inline double m_w(double x) noexcept { return 0.5 * std::cos(2.0 * std::numbers::pi * x); }

inline double std_normal(std::uint64_t key, std::uint64_t stream, std::uint64_t unit) noexcept {
  const double u1 = 1.0 - rng::uniform(key, stream, unit, 0);
  const double u2 = rng::uniform(key, stream, unit, 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline constexpr std::uint64_t kStreamX = rng::tag("pliv-x");
inline constexpr std::uint64_t kStreamC = rng::tag("pliv-c");
inline constexpr std::uint64_t kStreamU = rng::tag("pliv-u");
inline constexpr std::uint64_t kStreamEta = rng::tag("pliv-eta");
inline constexpr std::uint64_t kStreamE = rng::tag("pliv-e");

}  // namespace pliv

inline Dataset gen_pliv_data(std::size_t n, std::uint64_t seed, const PlivConfig& cfg = {}) {
  if (n == 0) throw ArgumentError("gen_pliv_data needs n >= 1");
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs);
  using namespace pliv;
  Dataset d;
  d.space = std::make_shared<const MetricSpace>(MetricSpace::empty_graph(n));
  d.obs.resize(n);
  GroundTruth t;
  t.ell_y.resize(n);
  t.ell_w.resize(n);
  t.ell_v.resize(n);
  t.eps.resize(n);
  t.theta0 = cfg.theta0;
  const double rho = cfg.instrument_is_treatment ? 0.0 : cfg.endogeneity;
  for (std::size_t i = 0; i < n; ++i) {
    auto& o = d.obs[i];
    o.x = rng::uniform(seed, kStreamX, i);
    o.c = rng::uniform(seed, kStreamC, i);
    const double eta = std_normal(seed, kStreamEta, i);
    const double eps =
        cfg.noise_scale * (rho * eta + std::sqrt(1.0 - rho * rho) * std_normal(seed, kStreamE, i));
    double pw = 0.0;
    if (cfg.instrument_is_treatment) {
      o.w = m_w(o.x) + eta > 0.0 ? 1 : 0;
      o.v = static_cast<double>(o.w);
      pw = normal_cdf(m_w(o.x));
      t.ell_v[i] = pw;
    } else {
      const double v = m_v(o.x) + std_normal(seed, kStreamU, i);
      o.v = v;
      o.w = cfg.strength * v + m_w(o.x) + eta > 0.0 ? 1 : 0;
      pw = normal_cdf((cfg.strength * m_v(o.x) + m_w(o.x)) /
                      std::sqrt(cfg.strength * cfg.strength + 1.0));
      t.ell_v[i] = m_v(o.x);
    }
    o.y = cfg.theta0 * o.w + h0(o.x) + eps;
    t.ell_w[i] = pw;
    t.ell_y[i] = cfg.theta0 * pw + h0(o.x);
    t.eps[i] = eps;
  }
  d.truth = std::move(t);
  return d;
}

// CSV with header y,w,x,c[,v]; the network goes to a separate edge list.
inline void write_dataset_csv(std::ostream& os, const Dataset& d) {
  const bool has_v = !d.obs.empty() && d.obs.front().v.has_value();
  os << (has_v ? "y,w,x,c,v\n" : "y,w,x,c\n");
  os.precision(17);
  for (const auto& o : d.obs) {
    os << o.y << ',' << o.w << ',' << o.x << ',' << o.c;
    if (has_v) os << ',' << o.v.value_or(0.0);
    os << '\n';
  }
}

}  // namespace nbdml
