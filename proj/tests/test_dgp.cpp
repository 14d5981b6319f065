#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "nbdml/dgp.hpp"
#include "nbdml/estimator.hpp"

using namespace nbdml;

namespace {

// E[f(C)] for C ~ U[0,1] and f piecewise constant between the given breakpoints.
template <class F>
double integrate_piecewise(F f, std::vector<double> breaks) {
  breaks.push_back(0.0);
  breaks.push_back(1.0);
  std::sort(breaks.begin(), breaks.end());
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < breaks.size(); ++k) {
    const double lo = std::max(0.0, breaks[k]), hi = std::min(1.0, breaks[k + 1]);
    if (hi > lo) total += (hi - lo) * f(0.5 * (lo + hi));
  }
  return total;
}

double corr(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST(ErNetwork, MeanDegreeMatchesAnalytic) {
  const std::size_t n = 500;
  double total = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    total += 2.0 * static_cast<double>(gen_er_network(n, 3.0, s).edge_count()) / n;
  }
  EXPECT_NEAR(total / 1000.0, 3.0 * 499.0 / 500.0, 0.1);
}

TEST(ErNetwork, Extremes) {
  EXPECT_EQ(gen_er_network(50, 0.0, 1).edge_count(), 0u);
  EXPECT_EQ(gen_er_network(4, 4.0, 1).edge_count(), 6u);
  EXPECT_THROW(gen_er_network(4, 5.0, 1), ArgumentError);
  const auto a = gen_er_network(300, 3.0, 99).edges();
  EXPECT_EQ(a, gen_er_network(300, 3.0, 99).edges());
  EXPECT_NE(a, gen_er_network(300, 3.0, 98).edges());
}

TEST(InterferenceDgp, OutcomeFunctions) {
  using namespace interference;
  for (double x = 0.0; x <= 1.0; x += 0.01) {
    for (double c = 0.0; c <= 1.0; c += 0.05) {
      const double simplified = x < 0.5 ? 3.5 : (x < 0.7 ? 1.5 : 4.0);
      EXPECT_EQ(g1(x, c), simplified);
    }
  }
  EXPECT_EQ(g0(0.5, 0.5), 0.5);
  EXPECT_EQ(g0(0.5, 0.1), -0.75);
  EXPECT_EQ(g0(0.3, 0.5), 0.25);
  EXPECT_EQ(g0(0.3, 0.1), -0.5);
  EXPECT_EQ(g1(0.6, -0.5), 0.5);
  EXPECT_EQ(g1(0.1, -0.5), 2.5);
  EXPECT_EQ(propensity(0.329), 0.15);
  EXPECT_EQ(propensity(0.33), 0.5);
  EXPECT_EQ(propensity(0.66), 0.85);
}

TEST(InterferenceDgp, FeaturesAndSupport) {
  InterferenceDgpConfig cfg{300, 3.0, 5, true};
  const auto d = gen_interference_dataset(cfg);
  ASSERT_EQ(d.size(), 300u);
  ASSERT_TRUE(d.truth);
  double eps_sq = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& o = d.obs[i];
    EXPECT_GE(o.c, 0.0);
    EXPECT_LE(o.c, 1.0);
    EXPECT_TRUE(o.w == 0 || o.w == 1);
    const auto nb = d.space->neighbors(i);
    double x = 0.0;
    for (auto j : nb) x += d.obs[j].c;
    if (!nb.empty()) x /= static_cast<double>(nb.size());
    EXPECT_DOUBLE_EQ(o.x, x);
    const double e = d.truth->eps[i];
    EXPECT_LE(std::abs(e), interference::kEpsHalfWidth);
    eps_sq += e * e;
    const double mu = o.w ? interference::g1(o.x, o.c) : interference::g0(o.x, o.c);
    EXPECT_DOUBLE_EQ(o.y, mu + e);
  }
  EXPECT_NEAR(eps_sq / 300.0, 0.01, 0.003);
}

TEST(InterferenceDgp, IsolatedUnitsHaveZeroFeature) {
  InterferenceDgpConfig cfg{40, 0.0, 3};
  const auto d = gen_interference_dataset(cfg);
  for (const auto& o : d.obs) EXPECT_EQ(o.x, 0.0);
}

TEST(InterferenceDgp, TreatedFractionFeatureMap) {
  InterferenceDgpConfig cfg{200, 3.0, 8};
  cfg.feature_map = FeatureMap::treated_fraction;
  const auto d = gen_interference_dataset(cfg);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto nb = d.space->neighbors(i);
    double x = 0.0;
    for (auto j : nb) x += d.obs[j].w;
    if (!nb.empty()) x /= static_cast<double>(nb.size());
    EXPECT_DOUBLE_EQ(d.obs[i].x, x);
  }
}

TEST(InterferenceDgp, Deterministic) {
  InterferenceDgpConfig cfg{400, 3.0, 77};
  const auto a = gen_interference_dataset(cfg);
  const auto b = gen_interference_dataset(cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(std::memcmp(&a.obs[i].y, &b.obs[i].y, sizeof(double)), 0);
    EXPECT_EQ(a.obs[i].x, b.obs[i].x);
    EXPECT_EQ(a.obs[i].w, b.obs[i].w);
  }
  cfg.seed = 78;
  EXPECT_NE(gen_interference_dataset(cfg).obs[0].c, a.obs[0].c);
}

TEST(InterferenceDgp, UnitDrawsDoNotDependOnN) {
  auto d1 = gen_interference_dataset({100, 0.0, 4});
  auto d2 = gen_interference_dataset({250, 0.0, 4});
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_EQ(d1.obs[i].c, d2.obs[i].c);
    EXPECT_EQ(d1.obs[i].w, d2.obs[i].w);
  }
}

TEST(InterferenceDgp, TreatedCountMatchesAnalytic) {
  const double analytic = 500.0 * (0.33 * 0.15 + 0.33 * 0.5 + 0.34 * 0.85);
  double total = 0.0;
  for (std::uint64_t r = 0; r < 400; ++r) {
    total += static_cast<double>(gen_interference_dataset({500, 3.0, r}).treated_count());
  }
  EXPECT_NEAR(total / 400.0, analytic, 1.5);
}

TEST(TrueAte, NoNetworkMatchesClosedForm) {
  using namespace interference;
  const double closed = integrate_piecewise([](double c) { return g1(0.0, c) - g0(0.0, c); },
                                            {-0.2, 0.2});
  EXPECT_DOUBLE_EQ(closed, 3.4);
  const auto est = true_ate({500, 0.0, 1}, 200);
  EXPECT_GT(est.std_error, 0.0);
  EXPECT_NEAR(est.value, closed, 4.0 * est.std_error);
}

TEST(TrueAte, Validation) {
  EXPECT_THROW(true_ate({500, 3.0, 1}, 0), ArgumentError);
  EXPECT_THROW(true_ate({3, 5.0, 1}, 10), ConfigError);
  EXPECT_EQ(true_ate({100, 3.0, 1}, 1).std_error, 0.0);
}

TEST(InterferenceDgp, LocalDependence) {
  const std::size_t n = 500, reps = 2000;
  auto space = std::make_shared<const MetricSpace>(gen_er_network(n, 3.0, 2024));
  std::vector<std::vector<double>> y(n, std::vector<double>(reps));
  for (std::size_t r = 0; r < reps; ++r) {
    InterferenceDgpConfig cfg{n, 3.0, rng::derive(9, r)};
    const auto d = gen_interference_data(cfg, space);
    for (std::size_t i = 0; i < n; ++i) y[i][r] = d.obs[i].y;
  }
  const double threshold = 4.0 / std::sqrt(static_cast<double>(reps));
  rng::Stream pick(3, 0);
  int tested = 0;
  double max_far = 0.0;
  while (tested < 60) {
    const auto i = pick.below(n), j = pick.below(n);
    if (space->distance(i, j) < 3.0) continue;
    max_far = std::max(max_far, std::abs(corr(y[i], y[j])));
    ++tested;
  }
  EXPECT_LT(max_far, threshold);
  double max_near = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto nb = space->neighbors(k);
    for (std::size_t a = 0; a < nb.size(); ++a)
      for (std::size_t b = a + 1; b < nb.size(); ++b)
        max_near = std::max(max_near, std::abs(corr(y[nb[a]], y[nb[b]])));
  }
  EXPECT_GT(max_near, threshold);
}

namespace {

struct RatioEstimate {
  double theta;
  double se;
};

RatioEstimate oracle_pliv(const Dataset& d, const PlivConfig& cfg) {
  const auto g = oracle_pliv_nuisance(cfg);
  std::vector<MomentValue> m;
  double spsi = 0, snu = 0;
  for (const auto& o : d.obs) {
    m.push_back(eval_pliv(o, std::get<PlivNuisance>(g.eval(o))));
    spsi += m.back().psi;
    snu += m.back().nu;
  }
  const double n = static_cast<double>(d.size());
  const double theta = snu / -spsi;
  double ss = 0;
  for (const auto& v : m) ss += v.at(theta) * v.at(theta);
  return {theta, std::sqrt(ss / n) / (std::sqrt(n) * (-spsi / n))};
}

}  // namespace

TEST(PlivDgp, NullEffectExogenous) {
  PlivConfig cfg;
  cfg.theta0 = 0.0;
  cfg.instrument_is_treatment = true;
  const auto d = gen_pliv_data(100000, 3, cfg);
  for (const auto& o : d.obs) EXPECT_EQ(*o.v, static_cast<double>(o.w));
  const auto est = oracle_pliv(d, cfg);
  EXPECT_NEAR(est.theta, 0.0, 3.0 * est.se);
}

TEST(PlivDgp, OracleEstimateConsistent) {
  PlivConfig cfg;
  const auto d = gen_pliv_data(100000, 11, cfg);
  ASSERT_TRUE(d.truth && d.truth->theta0);
  const auto est = oracle_pliv(d, cfg);
  EXPECT_NEAR(est.theta, cfg.theta0, 3.0 * est.se);
  EXPECT_LT(est.se, 0.05);
}

TEST(PlivDgp, MomentIdentityAcrossDesigns) {
  for (double theta0 : {-1.0, 0.25, 2.0}) {
    PlivConfig cfg;
    cfg.theta0 = theta0;
    cfg.endogeneity = 0.8;
    const auto d = gen_pliv_data(100000, 21, cfg);
    const auto est = oracle_pliv(d, cfg);
    EXPECT_NEAR(est.theta, theta0, 3.0 * est.se) << theta0;
  }
}

TEST(PlivDgp, TruthMatchesOracleFunctions) {
  PlivConfig cfg;
  const auto d = gen_pliv_data(50, 2, cfg);
  const auto g = oracle_pliv_nuisance(cfg);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto p = std::get<PlivNuisance>(g.eval(d.obs[i]));
    EXPECT_DOUBLE_EQ(p.ell_y, d.truth->ell_y[i]);
    EXPECT_DOUBLE_EQ(p.ell_w, d.truth->ell_w[i]);
    EXPECT_DOUBLE_EQ(p.ell_v, d.truth->ell_v[i]);
  }
  EXPECT_THROW(gen_pliv_data(0, 1), ArgumentError);
}

TEST(DatasetCsv, Header) {
  std::ostringstream a, b;
  write_dataset_csv(a, gen_interference_dataset({5, 1.0, 1}));
  EXPECT_EQ(a.str().substr(0, 8), "y,w,x,c\n");
  write_dataset_csv(b, gen_pliv_data(3, 1));
  EXPECT_EQ(b.str().substr(0, 10), "y,w,x,c,v\n");
  const auto s = b.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
}
