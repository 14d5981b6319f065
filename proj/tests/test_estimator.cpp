#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nbdml/estimator.hpp"

using namespace nbdml;

namespace {

EstimatorConfig oracle_config(EstimationMode mode = EstimationMode::full_sample) {
  EstimatorConfig cfg;
  cfg.mode = mode;
  cfg.nuisance = oracle_interference_nuisance();
  return cfg;
}

EstimatorConfig forest_config(EstimationMode mode, Resampling res, std::size_t trees) {
  EstimatorConfig cfg;
  cfg.mode = mode;
  cfg.nuisance = LearnedNuisanceSpec::forests(res, trees);
  return cfg;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// DR estimate with fixed nuisances plus its plug-in standard error.
std::pair<double, double> fixed_dr(const Dataset& d, const FixedNuisanceSpec& g) {
  MomentModel model;
  std::vector<double> nu;
  for (const auto& o : d.obs) nu.push_back(model.evaluate(o, g.eval(o)).nu);
  const double m = mean_of(nu);
  double ss = 0.0;
  for (double v : nu) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / static_cast<double>(nu.size())) / std::sqrt(static_cast<double>(nu.size()))};
}

}  // namespace

// ---------------------------------------------------------------- affine solve

TEST(AffineSolve, ConstantMoments) {
  const std::vector<double> psi(7, -1.0), nu(7, 0.37);
  const auto s = solve_affine_moment(psi, nu, 1);
  EXPECT_DOUBLE_EQ(s.theta[0], 0.37);
  EXPECT_LE(s.relative_residual, 1e-15);
  EXPECT_EQ(s.condition_number, 1.0);
}

TEST(AffineSolve, TwoDimensional) {
  // Blocks sum to A = [[2, 1], [1, 3]], nu sums to b = [1, 2]; theta = -A^-1 b.
  const std::vector<double> psi{1, 1, 0, 2, 1, 0, 1, 1};
  const std::vector<double> nu{0.5, 1, 0.5, 1};
  const auto s = solve_affine_moment(psi, nu, 2);
  EXPECT_NEAR(s.theta[0], -0.2, 1e-14);
  EXPECT_NEAR(s.theta[1], -0.6, 1e-14);
  EXPECT_NEAR(s.condition_number, (5 + std::sqrt(5.0)) / (5 - std::sqrt(5.0)), 1e-12);
}

TEST(AffineSolve, Errors) {
  const std::vector<double> zero(4, 0.0), nu(4, 1.0);
  EXPECT_THROW(solve_affine_moment(zero, nu, 1), EstimationError);
  EXPECT_THROW(solve_affine_moment(std::vector<double>{}, std::vector<double>{}, 1), EstimationError);
  EXPECT_THROW(solve_affine_moment(nu, std::vector<double>(3, 1.0), 1), ArgumentError);
  EXPECT_THROW(solve_affine_moment(nu, nu, 0), ArgumentError);
}

// ---------------------------------------------------------------- folds

TEST(Folds, EmptyGraphKeepsComplement) {
  const auto g = MetricSpace::empty_graph(500);
  const auto fa = make_neighborhood_folds(g, 5, 3.0, 1);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(fa.folds[k].size(), 100u);
    EXPECT_EQ(fa.training[k].size(), 400u);
  }
}

TEST(Folds, PartitionAndExclusionAudit) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t n = 100 + gen() % 1900;
    const double delta = 1.0 + static_cast<double>(gen() % 60) / 10.0;
    const std::size_t K = 2 + gen() % 6;
    const double d_star = static_cast<double>(gen() % 5);
    const auto g = gen_er_network(n, delta, gen());
    const auto fa = make_neighborhood_folds(g, K, d_star, gen());
    std::vector<int> seen(n, 0);
    std::size_t smallest = n, largest = 0;
    for (std::size_t k = 0; k < K; ++k) {
      smallest = std::min(smallest, fa.folds[k].size());
      largest = std::max(largest, fa.folds[k].size());
      for (auto i : fa.folds[k]) {
        ++seen[i];
        EXPECT_EQ(fa.fold_of[i], k);
      }
    }
    EXPECT_LE(largest - smallest, 1u);
    for (int s : seen) EXPECT_EQ(s, 1);
    // Exhaustive: training units are exactly those outside k at distance >= d_star.
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<double> to_fold(n, kInfDistance);
      for (auto j : fa.folds[k]) {
        const auto dist = g.bfs(j);
        for (std::size_t i = 0; i < n; ++i) {
          if (dist[i] >= 0) to_fold[i] = std::min(to_fold[i], static_cast<double>(dist[i]));
        }
      }
      std::vector<std::size_t> expect;
      for (std::size_t i = 0; i < n; ++i) {
        if (fa.fold_of[i] != k && to_fold[i] >= d_star) expect.push_back(i);
      }
      EXPECT_EQ(fa.training[k], expect);
    }
  }
}

TEST(Folds, MatchReportedTrainingSizes) {
  struct Case {
    std::size_t n;
    double delta;
    std::size_t K;
    double expect;
    double tol;
  };
  for (const auto& c : {Case{500, 3, 5, 74.12, 2.0}, Case{500, 8, 5, 0.46, 0.15},
                        Case{2000, 5, 2, 8.25, 1.0}}) {
    double total = 0.0;
    const int reps = 100;
    for (int r = 0; r < reps; ++r) {
      const auto g = gen_er_network(c.n, c.delta, rng::derive(41, r));
      const auto fa = make_neighborhood_folds(g, c.K, 3.0, rng::derive(42, r));
      for (auto s : fa.training_sizes()) total += static_cast<double>(s);
    }
    EXPECT_NEAR(total / (reps * static_cast<double>(c.K)), c.expect, c.tol) << c.delta;
  }
}

TEST(Folds, Deterministic) {
  const auto g = gen_er_network(300, 3.0, 1);
  const auto a = make_neighborhood_folds(g, 5, 3.0, 9);
  EXPECT_EQ(a.fold_of, make_neighborhood_folds(g, 5, 3.0, 9).fold_of);
  EXPECT_NE(a.fold_of, make_neighborhood_folds(g, 5, 3.0, 10).fold_of);
}

TEST(Folds, Errors) {
  const auto g = MetricSpace::empty_graph(4);
  EXPECT_THROW(make_neighborhood_folds(g, 1, 3.0, 0), ArgumentError);
  EXPECT_THROW(make_neighborhood_folds(g, 5, 3.0, 0), ArgumentError);
  EXPECT_THROW(make_neighborhood_folds(g, 2, -1.0, 0), ArgumentError);
}

TEST(Folds, EuclideanSpace) {
  std::vector<double> coords;
  for (int i = 0; i < 40; ++i) coords.push_back(i * 0.5);
  const auto s = MetricSpace::euclidean(coords, 1);
  const auto fa = make_neighborhood_folds(s, 4, 1.2, 3);
  for (std::size_t k = 0; k < 4; ++k) {
    for (auto i : fa.training[k]) {
      for (auto j : fa.folds[k]) EXPECT_GE(s.distance(i, j), 1.2);
    }
  }
}

// ---------------------------------------------------------------- estimators

TEST(Estimator, CrossfitWithoutExclusionEqualsFullSampleForOracle) {
  const auto d = gen_interference_dataset({1000, 3.0, 3});
  const auto full = fit_full_sample(d, oracle_config());
  auto cfg = oracle_config(EstimationMode::neighborhood_crossfit);
  cfg.exclusion_distance = 0.0;
  const auto cross = fit_crossfit(d, cfg);
  EXPECT_NEAR(cross.theta_hat, full.theta_hat, 1e-12);
  EXPECT_LE(full.moment_residual, 1e-10);
  EXPECT_LE(cross.moment_residual, 1e-10);
}

TEST(Estimator, OracleAtLargeNRecoversTrueAte) {
  const auto truth = true_ate({2000, 3.0, 5}, 2000);
  std::vector<double> est;
  for (std::uint64_t r = 0; r < 40; ++r) {
    const auto d = gen_interference_dataset({2000, 3.0, rng::derive(6, r)});
    est.push_back(estimate(d, oracle_config()).theta_hat);
  }
  for (double t : est) EXPECT_NEAR(t, truth.value, 3 * 0.033 + 3 * truth.std_error);
  EXPECT_NEAR(mean_of(est), truth.value, 3 * 0.033 / std::sqrt(40.0) + 3 * truth.std_error);
}

TEST(Estimator, DoubleRobustness) {
  const std::size_t n = 100000;
  const auto truth = true_ate({n, 3.0, 8}, 20);
  const auto d = gen_interference_dataset({n, 3.0, 9});
  const FixedNuisanceSpec flat_propensity{[](const Observation& o) -> NuisanceBundle {
    return DrAteNuisance{interference::g1(o.x, o.c), 0.5, interference::g0(o.x, o.c), 0.5};
  }};
  const FixedNuisanceSpec zero_outcome{[](const Observation& o) -> NuisanceBundle {
    const double e = interference::propensity(o.c);
    return DrAteNuisance{0.0, e, 0.0, 1.0 - e};
  }};
  for (const auto* g : {&flat_propensity, &zero_outcome}) {
    const auto [theta, se] = fixed_dr(d, *g);
    EXPECT_NEAR(theta, truth.value, 3.0 * std::hypot(se, truth.std_error));
  }
  // Both wrong: the estimate is biased well beyond sampling error.
  const FixedNuisanceSpec both_wrong{[](const Observation&) -> NuisanceBundle {
    return DrAteNuisance{0.0, 0.5, 0.0, 0.5};
  }};
  const auto [theta, se] = fixed_dr(d, both_wrong);
  EXPECT_GT(std::abs(theta - truth.value), 10.0 * se);
}

TEST(Estimator, ForestPipelines) {
  const auto d = gen_interference_dataset({500, 3.0, 12});
  for (auto mode : {EstimationMode::full_sample, EstimationMode::neighborhood_crossfit}) {
    for (auto res : {Resampling::bootstrap, Resampling::subsample}) {
      auto cfg = forest_config(mode, res, 30);
      cfg.seed = 4;
      const auto r = estimate(d, cfg);
      EXPECT_TRUE(std::isfinite(r.theta_hat));
      EXPECT_LE(r.moment_residual, 1e-10);
      EXPECT_EQ(r.theta_hat, estimate(d, cfg).theta_hat);
      if (mode == EstimationMode::full_sample) {
        ASSERT_EQ(r.nuisances.size(), 3u);
        EXPECT_EQ(r.nuisances[0].name, "propensity");
        EXPECT_EQ(r.nuisances[1].training_rows + r.nuisances[2].training_rows, 500u);
      } else {
        ASSERT_EQ(r.folds.size(), 5u);
        EXPECT_EQ(r.fold_training_sizes.size(), 5u);
        double s = 0.0;
        for (const auto& f : r.folds) s += f.theta_hat;
        EXPECT_NEAR(r.theta_hat, s / 5.0, 1e-14);
      }
    }
  }
}

TEST(Estimator, CollapsedTrainingFoldsFallBack) {
  int partial = 0, collapsed = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto d = gen_interference_dataset({500, 5.0, s});
    auto cfg = forest_config(EstimationMode::neighborhood_crossfit, Resampling::bootstrap, 10);
    try {
      const auto r = fit_crossfit(d, cfg);
      EXPECT_TRUE(std::isfinite(r.theta_hat));
      for (const auto& f : r.folds) {
        if (f.fallback) {
          ++partial;
          const bool pooled = std::any_of(f.nuisances.begin(), f.nuisances.end(),
                                          [](const auto& p) { return p.fallback; });
          EXPECT_TRUE(pooled);
        }
      }
    } catch (const EstimationError&) {
      ++collapsed;
    }
  }
  EXPECT_GT(partial, 0);
  // Dense enough that every fold collapses.
  const auto dense = gen_interference_dataset({500, 8.0, 2});
  EXPECT_THROW(fit_crossfit(dense, forest_config(EstimationMode::neighborhood_crossfit,
                                                 Resampling::bootstrap, 10)),
               EstimationError);
}

TEST(Estimator, AllFoldsEmpty) {
  std::vector<MetricSpace::Edge> e;
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = i + 1; j < 20; ++j) e.emplace_back(i, j);
  InterferenceDgpConfig dc{20, 0.0, 1};
  const auto d = gen_interference_data(dc, std::make_shared<const MetricSpace>(MetricSpace::graph(20, e)));
  auto cfg = forest_config(EstimationMode::neighborhood_crossfit, Resampling::bootstrap, 5);
  EXPECT_THROW(fit_crossfit(d, cfg), EstimationError);
  EXPECT_NO_THROW(fit_crossfit(d, oracle_config(EstimationMode::neighborhood_crossfit)));
}

TEST(Estimator, DataErrors) {
  Dataset empty;
  empty.space = std::make_shared<const MetricSpace>(MetricSpace::empty_graph(0));
  EXPECT_THROW(fit_full_sample(empty, oracle_config()), DataError);
  auto d = gen_interference_dataset({50, 1.0, 1});
  for (auto& o : d.obs) o.w = 1;
  EXPECT_THROW(fit_full_sample(d, oracle_config()), DataError);
  auto bad = oracle_config();
  bad.moment.trim = 0.0;
  EXPECT_THROW(fit_full_sample(gen_interference_dataset({50, 1.0, 1}), bad), ConfigError);
}

TEST(Estimator, PlivWithForests) {
  PlivConfig pc;
  const auto d = gen_pliv_data(3000, 5, pc);
  EstimatorConfig cfg;
  cfg.mode = EstimationMode::neighborhood_crossfit;
  cfg.moment.kind = MomentKind::pliv;
  auto spec = LearnedNuisanceSpec::forests(Resampling::subsample, 50);
  spec.propensity = spec.outcome;
  spec.propensity_features = FeatureSet::x_only;
  spec.outcome_features = FeatureSet::x_only;
  cfg.nuisance = spec;
  const auto r = estimate(d, cfg);
  EXPECT_NEAR(r.theta_hat, pc.theta0, 0.15);
  EXPECT_LE(r.moment_residual, 1e-10);
}

TEST(Estimator, JsonDiagnostics) {
  const auto d = gen_interference_dataset({300, 3.0, 2});
  const auto r = estimate(d, forest_config(EstimationMode::neighborhood_crossfit,
                                           Resampling::subsample, 5));
  const nlohmann::json j = r;
  EXPECT_EQ(j.at("folds").size(), 5u);
  EXPECT_TRUE(j.at("folds")[0].contains("nuisances"));
  EXPECT_DOUBLE_EQ(j.at("theta_hat").get<double>(), r.theta_hat);
}
