// Command-line front end: run simulations, compute theta_0, measure stability,
// tabulate fold sizes, and validate config files.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "json.hpp"
#include "nbdml/nbdml.hpp"

namespace {

using namespace nbdml;

struct Common {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  std::optional<std::size_t> workers;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "YAML config file")->check(CLI::ExistingFile);
  app->add_option("--preset", c.preset, "table1 | table2 | stability")
      ->check(CLI::IsMember({"table1", "table2", "stability"}));
  app->add_option("--seed", c.seed, "master seed");
  app->add_option("--reps", c.reps, "replications");
  app->add_option("--workers", c.workers, "worker threads (0 = all cores)");
  app->add_option("--out", c.out, "output directory");
}

SimConfig resolve(const Common& c, Experiment fallback) {
  SimConfig cfg = preset(fallback);
  if (!c.config.empty()) {
    cfg = load_config(c.config);
  } else if (!c.preset.empty()) {
    cfg = preset(*parse_experiment(c.preset));
  }
  if (c.seed) cfg.master_seed = *c.seed;
  if (c.reps) cfg.reps = *c.reps;
  if (c.workers) cfg.workers = *c.workers;
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError(errs);
  return cfg;
}

void print_stability(const StabilityReport& rep) {
  std::printf("%7s %6s %7s %10s %14s %12s\n", "n", "pairs", "trees", "mean |S|", "max RMS (Z)", "max RMS (Z*)");
  for (const auto& r : rep.records) {
    std::printf("%7zu %6zu %7zu %10.1f %14.6f %12.6f\n", r.n, r.pairs, r.trees, r.mean_swap_size,
                r.max_rms_in_sample, r.max_rms_fresh);
  }
  std::printf("log-log slope: in-sample %.3f, fresh %.3f (threshold %.2f) -> %s\n", rep.slope_in_sample,
              rep.slope_fresh, rep.slope_threshold, rep.stable() ? "stable" : "not stable");
  for (const auto& w : rep.warnings) std::printf("warning: %s\n", w.c_str());
}

int run_stability_cmd(const SimConfig& cfg) {
  const auto rep = run_stability(cfg);
  print_stability(rep);
  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  std::ofstream js(dir / "stability.json");
  js << nlohmann::json(rep).dump(2) << "\n";
  std::ofstream csv(dir / "stability.csv");
  write_stability_csv(csv, rep);
  if (!js || !csv) throw IoError("cannot write to " + dir.string());
  std::printf("wrote %s\n", dir.string().c_str());
  return 0;
}

int run_sim_cmd(const SimConfig& cfg) {
  const auto result = run_experiment(cfg);
  write_text_tables(std::cout, result);
  for (const auto& p : emit_tables(result, cfg.output_dir)) std::printf("wrote %s\n", p.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Network DML without cross-fitting: simulations and stability diagnostics"};
  app.require_subcommand(1);

  Common run_opts, stab_opts, fold_opts;
  auto* run = app.add_subcommand("run", "run a configured experiment (default preset: table1)");
  add_common(run, run_opts);

  auto* stab = app.add_subcommand("stability", "measure neighborhood stability (default preset: stability)");
  add_common(stab, stab_opts);

  auto* fold = app.add_subcommand("fold-sizes", "mean training-fold sizes (default preset: table2)");
  add_common(fold, fold_opts);

  auto* ate = app.add_subcommand("true-ate", "Monte Carlo theta_0 for the interference design");
  std::vector<std::size_t> ate_n{500, 1000, 2000};
  double ate_delta = 3.0;
  std::size_t ate_reps = 10000;
  std::uint64_t ate_seed = 0;
  ate->add_option("--n", ate_n, "network sizes")->expected(1, -1);
  ate->add_option("--delta", ate_delta, "expected degree");
  ate->add_option("--reps", ate_reps, "networks per size");
  ate->add_option("--seed", ate_seed, "seed");

  auto* val = app.add_subcommand("validate", "check a config file and print every violation");
  std::string val_path;
  val->add_option("--config", val_path, "YAML config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = resolve(run_opts, Experiment::table1);
      return cfg.experiment == Experiment::stability ? run_stability_cmd(cfg) : run_sim_cmd(cfg);
    }
    if (*stab) {
      auto cfg = resolve(stab_opts, Experiment::stability);
      cfg.experiment = Experiment::stability;
      return run_stability_cmd(cfg);
    }
    if (*fold) {
      auto cfg = resolve(fold_opts, Experiment::table2);
      cfg.methods = {Method::fold_sizes};
      return run_sim_cmd(cfg);
    }
    if (*ate) {
      std::printf("%7s %7s %8s %12s %12s\n", "n", "delta", "reps", "theta0", "std_error");
      for (auto n : ate_n) {
        InterferenceDgpConfig c;
        c.n = n;
        c.delta = ate_delta;
        c.seed = ate_seed;
        const auto t = true_ate(c, ate_reps);
        std::printf("%7zu %7g %8zu %12.6f %12.6f\n", n, ate_delta, t.reps, t.value, t.std_error);
      }
      return 0;
    }
    if (*val) {
      const auto p = validate_config(val_path);
      if (p.ok()) {
        std::printf("ok\n%s", to_yaml(*p.config).c_str());
        return 0;
      }
      for (const auto& e : p.errors) std::fprintf(stderr, "%s: %s\n", val_path.c_str(), e.c_str());
      return 1;
    }
  } catch (const ConfigError& e) {
    for (const auto& m : e.messages()) std::fprintf(stderr, "config error: %s\n", m.c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
