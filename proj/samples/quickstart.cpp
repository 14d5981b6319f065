// Draw one network dataset, estimate the ATE with and without cross-fitting,
// and compare with the Monte Carlo theta_0.

#include <cstdio>

#include "nbdml/nbdml.hpp"

int main() {
  using namespace nbdml;
  InterferenceDgpConfig dgp;
  dgp.n = 1000;
  dgp.delta = 3.0;
  dgp.seed = 7;
  const auto data = gen_interference_dataset(dgp);
  std::printf("n=%zu treated=%zu\n", data.size(), data.treated_count());

  EstimatorConfig cfg;
  cfg.nuisance = LearnedNuisanceSpec::forests(Resampling::subsample, 100);
  cfg.seed = 11;
  const auto full = fit_full_sample(data, cfg);
  std::printf("full sample:   theta_hat=%.4f  residual=%.1e\n", full.theta_hat, full.moment_residual);

  cfg.mode = EstimationMode::neighborhood_crossfit;
  const auto cf = fit_crossfit(data, cfg);
  std::printf("cross-fit K=5: theta_hat=%.4f  mean training size=%.1f\n", cf.theta_hat,
              cf.mean_training_size());

  const auto truth = true_ate(dgp, 2000);
  std::printf("theta_0 ~= %.4f (se %.4f)\n", truth.value, truth.std_error);
}
