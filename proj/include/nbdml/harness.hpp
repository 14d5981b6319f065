#pragma once

// Monte Carlo orchestration for the interference design: configuration files,
// presets, replicated estimation over a seed lattice, and result tables.

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "nbdml/dgp.hpp"
#include "nbdml/error.hpp"
#include "nbdml/estimator.hpp"
#include "nbdml/parallel.hpp"
#include "nbdml/rng.hpp"
#include "nbdml/stability.hpp"

namespace nbdml {

// ---------------------------------------------------------------- config

enum class Experiment { table1, table2, stability, custom };

// What a replication computes. `fold_sizes` only builds the network and the
// neighborhood-excluded folds.
enum class Method { bootstrap_full, bootstrap_crossfit, subsample_full, subsample_crossfit, fold_sizes };

inline constexpr Method kEstimationMethods[] = {Method::bootstrap_full, Method::bootstrap_crossfit,
                                                Method::subsample_full, Method::subsample_crossfit};

inline std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::table1: return "table1";
    case Experiment::table2: return "table2";
    case Experiment::stability: return "stability";
    case Experiment::custom: return "custom";
  }
  return "custom";
}

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::bootstrap_full: return "bootstrap/full";
    case Method::bootstrap_crossfit: return "bootstrap/crossfit";
    case Method::subsample_full: return "subsample/full";
    case Method::subsample_crossfit: return "subsample/crossfit";
    case Method::fold_sizes: return "fold-sizes";
  }
  return "fold-sizes";
}

inline std::string_view to_string(FeatureSet f) {
  switch (f) {
    case FeatureSet::x_c: return "x_c";
    case FeatureSet::c_only: return "c_only";
    case FeatureSet::x_only: return "x_only";
  }
  return "x_c";
}

inline std::string_view to_string(SubsampleRule r) {
  return r == SubsampleRule::cube_root ? "cube_root" : "full";
}

inline std::optional<Experiment> parse_experiment(std::string_view s) {
  for (auto e : {Experiment::table1, Experiment::table2, Experiment::stability, Experiment::custom}) {
    if (to_string(e) == s) return e;
  }
  return std::nullopt;
}

inline std::optional<Method> parse_method(std::string_view s) {
  for (auto m : {Method::bootstrap_full, Method::bootstrap_crossfit, Method::subsample_full,
                 Method::subsample_crossfit, Method::fold_sizes}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

inline std::optional<FeatureSet> parse_feature_set(std::string_view s) {
  for (auto f : {FeatureSet::x_c, FeatureSet::c_only, FeatureSet::x_only}) {
    if (to_string(f) == s) return f;
  }
  return std::nullopt;
}

inline std::optional<SubsampleRule> parse_subsample_rule(std::string_view s) {
  if (s == "cube_root") return SubsampleRule::cube_root;
  if (s == "full") return SubsampleRule::full;
  return std::nullopt;
}

inline bool is_crossfit(Method m) {
  return m == Method::bootstrap_crossfit || m == Method::subsample_crossfit;
}

inline bool is_subsample(Method m) {
  return m == Method::subsample_full || m == Method::subsample_crossfit;
}

struct Design {
  double delta = 3.0;  // expected degree
  std::size_t folds = 5;
  bool operator==(const Design&) const = default;
};

struct LearnerSettings {
  std::size_t trees = 100;
  std::size_t min_leaf = 5;
  double subsample_scale = 10.0;
  SubsampleRule subsample_rule = SubsampleRule::cube_root;
  FeatureSet propensity_features = FeatureSet::x_c;
  FeatureSet outcome_features = FeatureSet::x_c;
  bool operator==(const LearnerSettings&) const = default;

  LearnedNuisanceSpec spec(Resampling resampling) const {
    auto s = LearnedNuisanceSpec::forests(resampling, trees, subsample_rule);
    for (auto* p : {&s.propensity, &s.outcome}) {
      auto& f = std::get<ForestConfig>(*p);
      f.min_leaf = min_leaf;
      f.subsample_scale = subsample_scale;
    }
    s.propensity_features = propensity_features;
    s.outcome_features = outcome_features;
    return s;
  }
};

struct StabilitySettings {
  double radius = 3.0;
  std::size_t diagonal_pairs = 5;
  std::size_t offdiagonal_pairs = 5;
  bool all_diagonal = false;
  std::size_t mc_reps = 50;
  std::optional<double> trees_per_unit = 1.0;  // unset: use learner.trees
  double slope_threshold = -0.45;
  bool operator==(const StabilitySettings&) const = default;
};

struct SimConfig {
  Experiment experiment = Experiment::custom;
  std::vector<std::size_t> n_grid{500};
  std::vector<Design> designs{Design{}};
  double exclusion_distance = 3.0;
  std::size_t reps = 100;
  std::vector<Method> methods{std::begin(kEstimationMethods), std::end(kEstimationMethods)};
  LearnerSettings learner;
  double trim = 0.01;
  std::size_t theta0_reps = 10000;
  std::uint64_t master_seed = 0;
  std::string output_dir = "results";
  std::size_t workers = 0;  // 0 = all cores
  StabilitySettings stability;

  bool operator==(const SimConfig&) const = default;

  bool needs_estimation() const {
    return std::any_of(methods.begin(), methods.end(), [](Method m) { return m != Method::fold_sizes; });
  }

  MomentModel moment() const {
    MomentModel m;
    m.trim = trim;
    return m;
  }

  StabilityConfig stability_config() const {
    StabilityConfig c;
    c.radius = stability.radius;
    c.diagonal_pairs = stability.diagonal_pairs;
    c.offdiagonal_pairs = stability.offdiagonal_pairs;
    c.all_diagonal = stability.all_diagonal;
    c.mc_reps = stability.mc_reps;
    c.moment = moment();
    c.learner = learner.spec(Resampling::subsample);
    c.trees_per_unit = stability.trees_per_unit;
    c.slope_threshold = stability.slope_threshold;
    c.seed = master_seed;
    c.workers = workers;
    return c;
  }

  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (reps == 0) errs.emplace_back("reps must be >= 1");
    if (n_grid.empty()) errs.emplace_back("n_grid must not be empty");
    if (designs.empty()) errs.emplace_back("at least one design (delta, folds) is required");
    if (experiment != Experiment::stability && methods.empty()) {
      errs.emplace_back("methods must not be empty");
    }
    if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size()) {
      errs.emplace_back("methods contain duplicates");
    }
    const bool folds_used = std::any_of(methods.begin(), methods.end(), [](Method m) {
      return is_crossfit(m) || m == Method::fold_sizes;
    });
    for (const auto& d : designs) {
      if (folds_used && d.folds < 2) errs.emplace_back("folds must be >= 2");
      for (auto n : n_grid) {
        InterferenceDgpConfig dgp;
        dgp.n = n;
        dgp.delta = d.delta;
        for (auto& e : dgp.validate()) {
          errs.push_back("n=" + std::to_string(n) + ", delta=" + fmt_num(d.delta) + ": " + e);
        }
        if (folds_used && d.folds > n) {
          errs.push_back("n=" + std::to_string(n) + ": more folds than units");
        }
      }
    }
    if (!(exclusion_distance >= 0.0)) errs.emplace_back("exclusion_distance must be >= 0");
    if (learner.trees == 0) errs.emplace_back("learner.trees must be >= 1");
    if (learner.min_leaf == 0) errs.emplace_back("learner.min_leaf must be >= 1");
    if (!(learner.subsample_scale > 0.0)) errs.emplace_back("learner.subsample_scale must be > 0");
    const bool subsample_used = experiment == Experiment::stability ||
                                std::any_of(methods.begin(), methods.end(), is_subsample);
    if (!subsample_used && (learner.subsample_rule != SubsampleRule::cube_root ||
                            learner.subsample_scale != 10.0)) {
      errs.emplace_back("subsample settings require a subsample method");
    }
    for (auto& e : moment().validate()) errs.push_back(e);
    if (needs_estimation() && theta0_reps == 0) errs.emplace_back("theta0_reps must be >= 1");
    if (output_dir.empty()) errs.emplace_back("output_dir must not be empty");
    if (experiment == Experiment::stability) {
      for (auto& e : stability_config().validate()) errs.push_back("stability: " + e);
      for (auto n : n_grid) {
        if (n < 2) errs.emplace_back("stability: every n must be >= 2");
      }
    }
    return errs;
  }

  static std::string fmt_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
  }
};

// Reduced-scale presets: table1 and table2 use fewer replications and
// trees than a full reproduction (see configs/ for the full-scale file).
inline SimConfig preset(Experiment e) {
  SimConfig c;
  c.experiment = e;
  c.master_seed = 20240601;
  switch (e) {
    case Experiment::table1:
      c.n_grid = {500, 1000, 2000};
      c.designs = {{3.0, 5}};
      c.reps = 1000;
      c.learner.trees = 100;
      c.output_dir = "results/table1";
      break;
    case Experiment::table2:
      c.n_grid = {500, 1000, 2000};
      c.designs = {{3.0, 5}, {8.0, 5}, {5.0, 2}};
      c.reps = 500;
      c.methods = {Method::fold_sizes};
      c.output_dir = "results/table2";
      break;
    case Experiment::stability:
      c.n_grid = {250, 500, 1000};
      c.designs = {{3.0, 5}};
      c.methods = {};
      c.reps = 1;
      c.output_dir = "results/stability";
      break;
    case Experiment::custom:
      break;
  }
  return c;
}

// ---------------------------------------------------------------- YAML loading

namespace detail {

class YamlReader {
 public:
  explicit YamlReader(std::vector<std::string>& errs) : errs_(errs) {}

  static std::string where(const YAML::Node& n) {
    const auto m = n.Mark();
    if (m.is_null()) return "";
    return "line " + std::to_string(m.line + 1) + ": ";
  }

  void error(const YAML::Node& n, const std::string& msg) { errs_.push_back(where(n) + msg); }

  void check_keys(const YAML::Node& map, std::initializer_list<std::string_view> allowed,
                  const std::string& section) {
    for (const auto& kv : map) {
      const auto key = kv.first.as<std::string>();
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        error(kv.first, "unknown key '" + section + key + "'");
      }
    }
  }

  bool is_map(const YAML::Node& n, const std::string& name) {
    if (n.IsMap()) return true;
    error(n, "'" + name + "' must be a mapping");
    return false;
  }

  template <class T>
  void read(const YAML::Node& parent, const char* key, T& out) {
    const auto n = parent[key];
    if (!n) return;
    if (!n.IsScalar()) {
      error(n, std::string("'") + key + "' must be a scalar");
      return;
    }
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        const auto s = n.as<std::string>();
        if (!s.empty() && s.front() == '-') throw YAML::Exception(n.Mark(), "negative");
        out = static_cast<T>(n.as<unsigned long long>());
      } else {
        out = n.as<T>();
      }
    } catch (const YAML::Exception&) {
      error(n, std::string("'") + key + "' has an invalid value '" + n.as<std::string>() + "'");
    }
  }

  template <class E, class Parse>
  void read_enum(const YAML::Node& parent, const char* key, E& out, Parse parse) {
    std::string s;
    if (!parent[key]) return;
    read(parent, key, s);
    if (s.empty()) return;
    if (auto v = parse(s)) {
      out = *v;
    } else {
      error(parent[key], std::string("'") + key + "' has an unknown value '" + s + "'");
    }
  }

  template <class T>
  void read_list(const YAML::Node& parent, const char* key, std::vector<T>& out) {
    const auto n = parent[key];
    if (!n) return;
    if (!n.IsSequence()) {
      error(n, std::string("'") + key + "' must be a list");
      return;
    }
    std::vector<T> v;
    for (const auto& item : n) {
      try {
        if constexpr (std::is_same_v<T, std::size_t>) {
          const auto s = item.as<std::string>();
          if (!s.empty() && s.front() == '-') throw YAML::Exception(item.Mark(), "negative");
          v.push_back(static_cast<T>(item.as<unsigned long long>()));
        } else {
          v.push_back(item.as<T>());
        }
      } catch (const YAML::Exception&) {
        error(item, std::string("'") + key + "' has an invalid entry");
      }
    }
    out = std::move(v);
  }

 private:
  std::vector<std::string>& errs_;
};

inline void read_sim_config(const YAML::Node& root, SimConfig& c, std::vector<std::string>& errs) {
  YamlReader r(errs);
  if (!root || root.IsNull()) return;
  if (!r.is_map(root, "config")) return;
  r.check_keys(root,
               {"preset", "experiment", "n_grid", "delta", "folds", "designs", "exclusion_distance",
                "reps", "methods", "learner", "moment", "theta0_reps", "master_seed", "output_dir",
                "workers", "stability"},
               "");
  if (root["preset"]) {
    Experiment e = Experiment::custom;
    r.read_enum(root, "preset", e, parse_experiment);
    c = preset(e);
  }
  r.read_enum(root, "experiment", c.experiment, parse_experiment);
  r.read_list(root, "n_grid", c.n_grid);
  if (root["designs"]) {
    if (root["delta"] || root["folds"]) r.error(root["designs"], "'designs' excludes 'delta' and 'folds'");
    const auto ds = root["designs"];
    if (!ds.IsSequence()) {
      r.error(ds, "'designs' must be a list");
    } else {
      std::vector<Design> v;
      for (const auto& item : ds) {
        if (!r.is_map(item, "designs entry")) continue;
        r.check_keys(item, {"delta", "folds"}, "designs.");
        Design d;
        r.read(item, "delta", d.delta);
        r.read(item, "folds", d.folds);
        v.push_back(d);
      }
      c.designs = std::move(v);
    }
  } else if (root["delta"] || root["folds"]) {
    Design d = c.designs.empty() ? Design{} : c.designs.front();
    r.read(root, "delta", d.delta);
    r.read(root, "folds", d.folds);
    c.designs = {d};
  }
  r.read(root, "exclusion_distance", c.exclusion_distance);
  r.read(root, "reps", c.reps);
  if (root["methods"]) {
    std::vector<std::string> names;
    r.read_list(root, "methods", names);
    std::vector<Method> ms;
    for (const auto& s : names) {
      if (auto m = parse_method(s)) {
        ms.push_back(*m);
      } else {
        r.error(root["methods"], "unknown method '" + s + "'");
      }
    }
    c.methods = std::move(ms);
  }
  if (const auto l = root["learner"]; l && r.is_map(l, "learner")) {
    r.check_keys(l,
                 {"trees", "min_leaf", "subsample_scale", "subsample_rule", "propensity_features",
                  "outcome_features"},
                 "learner.");
    r.read(l, "trees", c.learner.trees);
    r.read(l, "min_leaf", c.learner.min_leaf);
    r.read(l, "subsample_scale", c.learner.subsample_scale);
    r.read_enum(l, "subsample_rule", c.learner.subsample_rule, parse_subsample_rule);
    r.read_enum(l, "propensity_features", c.learner.propensity_features, parse_feature_set);
    r.read_enum(l, "outcome_features", c.learner.outcome_features, parse_feature_set);
  }
  if (const auto m = root["moment"]; m && r.is_map(m, "moment")) {
    r.check_keys(m, {"trim"}, "moment.");
    r.read(m, "trim", c.trim);
  }
  r.read(root, "theta0_reps", c.theta0_reps);
  r.read(root, "master_seed", c.master_seed);
  r.read(root, "output_dir", c.output_dir);
  r.read(root, "workers", c.workers);
  if (const auto s = root["stability"]; s && r.is_map(s, "stability")) {
    r.check_keys(s,
                 {"radius", "diagonal_pairs", "offdiagonal_pairs", "all_diagonal", "mc_reps",
                  "trees_per_unit", "slope_threshold"},
                 "stability.");
    r.read(s, "radius", c.stability.radius);
    r.read(s, "diagonal_pairs", c.stability.diagonal_pairs);
    r.read(s, "offdiagonal_pairs", c.stability.offdiagonal_pairs);
    r.read(s, "all_diagonal", c.stability.all_diagonal);
    r.read(s, "mc_reps", c.stability.mc_reps);
    if (const auto t = s["trees_per_unit"]) {
      if (t.IsNull()) {
        c.stability.trees_per_unit.reset();
      } else {
        double v = 0.0;
        r.read(s, "trees_per_unit", v);
        c.stability.trees_per_unit = v;
      }
    }
    r.read(s, "slope_threshold", c.stability.slope_threshold);
  }
}

}  // namespace detail

struct ConfigParse {
  std::optional<SimConfig> config;
  std::vector<std::string> errors;  // parse and validation errors together
  bool ok() const { return config.has_value(); }
};

inline ConfigParse parse_config(std::string_view text) {
  ConfigParse out;
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    out.errors.push_back("syntax error at line " + std::to_string(e.mark.line + 1) + ", column " +
                         std::to_string(e.mark.column + 1) + ": " + e.msg);
    return out;
  }
  SimConfig c;
  detail::read_sim_config(root, c, out.errors);
  for (auto& e : c.validate()) out.errors.push_back(std::move(e));
  if (out.errors.empty()) out.config = std::move(c);
  return out;
}

// Reads and cross-validates a config file, collecting every violation.
inline ConfigParse validate_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline SimConfig load_config(const std::filesystem::path& path) {
  auto p = validate_config(path);
  if (!p.ok()) throw ConfigError(p.errors);
  return *p.config;
}

inline std::string to_yaml(const SimConfig& c) {
  YAML::Emitter y;
  y.SetDoublePrecision(15);
  y << YAML::BeginMap;
  y << YAML::Key << "experiment" << YAML::Value << std::string(to_string(c.experiment));
  y << YAML::Key << "n_grid" << YAML::Value << YAML::Flow << c.n_grid;
  y << YAML::Key << "designs" << YAML::Value << YAML::BeginSeq;
  for (const auto& d : c.designs) {
    y << YAML::Flow << YAML::BeginMap << YAML::Key << "delta" << YAML::Value << d.delta << YAML::Key
      << "folds" << YAML::Value << d.folds << YAML::EndMap;
  }
  y << YAML::EndSeq;
  y << YAML::Key << "exclusion_distance" << YAML::Value << c.exclusion_distance;
  y << YAML::Key << "reps" << YAML::Value << c.reps;
  y << YAML::Key << "methods" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (auto m : c.methods) y << std::string(to_string(m));
  y << YAML::EndSeq;
  y << YAML::Key << "learner" << YAML::Value << YAML::BeginMap;
  y << YAML::Key << "trees" << YAML::Value << c.learner.trees;
  y << YAML::Key << "min_leaf" << YAML::Value << c.learner.min_leaf;
  y << YAML::Key << "subsample_scale" << YAML::Value << c.learner.subsample_scale;
  y << YAML::Key << "subsample_rule" << YAML::Value << std::string(to_string(c.learner.subsample_rule));
  y << YAML::Key << "propensity_features" << YAML::Value
    << std::string(to_string(c.learner.propensity_features));
  y << YAML::Key << "outcome_features" << YAML::Value << std::string(to_string(c.learner.outcome_features));
  y << YAML::EndMap;
  y << YAML::Key << "moment" << YAML::Value << YAML::BeginMap << YAML::Key << "trim" << YAML::Value
    << c.trim << YAML::EndMap;
  y << YAML::Key << "theta0_reps" << YAML::Value << c.theta0_reps;
  y << YAML::Key << "master_seed" << YAML::Value << c.master_seed;
  y << YAML::Key << "output_dir" << YAML::Value << c.output_dir;
  y << YAML::Key << "workers" << YAML::Value << c.workers;
  y << YAML::Key << "stability" << YAML::Value << YAML::BeginMap;
  y << YAML::Key << "radius" << YAML::Value << c.stability.radius;
  y << YAML::Key << "diagonal_pairs" << YAML::Value << c.stability.diagonal_pairs;
  y << YAML::Key << "offdiagonal_pairs" << YAML::Value << c.stability.offdiagonal_pairs;
  y << YAML::Key << "all_diagonal" << YAML::Value << c.stability.all_diagonal;
  y << YAML::Key << "mc_reps" << YAML::Value << c.stability.mc_reps;
  y << YAML::Key << "trees_per_unit" << YAML::Value;
  if (c.stability.trees_per_unit) {
    y << *c.stability.trees_per_unit;
  } else {
    y << YAML::Null;
  }
  y << YAML::Key << "slope_threshold" << YAML::Value << c.stability.slope_threshold;
  y << YAML::EndMap;
  y << YAML::EndMap;
  return std::string(y.c_str()) + "\n";
}

// ---------------------------------------------------------------- results

struct SimRecord {
  std::size_t n = 0;
  double delta = 0.0;
  std::size_t folds = 0;
  Method method = Method::bootstrap_full;
  std::optional<double> theta0;
  std::optional<double> bias;     // |mean(theta_hat) - theta0|
  std::optional<double> std_dev;  // sample sd, needs two successful reps
  double mean_treated = 0.0;
  double mean_training_size = 0.0;
  std::size_t reps = 0;
  std::size_t failures = 0;  // replications whose estimation failed
  double wall_seconds = 0.0;
  std::vector<double> theta;  // successful replications, in replication order

  bool operator==(const SimRecord&) const = default;

  bool same_estimates(const SimRecord& o) const {
    auto a = *this, b = o;
    a.wall_seconds = b.wall_seconds = 0.0;
    return a == b;
  }
};

struct SimResult {
  Experiment experiment = Experiment::custom;
  std::uint64_t master_seed = 0;
  std::vector<SimRecord> records;

  bool operator==(const SimResult&) const = default;

  // Equality ignoring timings.
  bool same_estimates(const SimResult& o) const {
    if (experiment != o.experiment || master_seed != o.master_seed || records.size() != o.records.size()) {
      return false;
    }
    for (std::size_t k = 0; k < records.size(); ++k) {
      if (!records[k].same_estimates(o.records[k])) return false;
    }
    return true;
  }
};

struct ThetaSummary {
  std::optional<double> bias;
  std::optional<double> std_dev;
  double mean = std::numeric_limits<double>::quiet_NaN();
};

inline ThetaSummary summarize_theta(std::span<const double> theta, std::optional<double> theta0) {
  ThetaSummary s;
  if (theta.empty()) return s;
  double sum = 0.0;
  for (double t : theta) sum += t;
  s.mean = sum / static_cast<double>(theta.size());
  if (theta0) s.bias = std::abs(s.mean - *theta0);
  if (theta.size() >= 2) {
    double ss = 0.0;
    for (double t : theta) ss += (t - s.mean) * (t - s.mean);
    s.std_dev = std::sqrt(ss / static_cast<double>(theta.size() - 1));
  }
  return s;
}

// ---------------------------------------------------------------- running

namespace detail {

inline constexpr std::uint64_t kStreamSimRep = rng::tag("sim-rep");
inline constexpr std::uint64_t kStreamTheta0 = rng::tag("sim-theta0");
inline constexpr std::uint64_t kStreamSimFolds = rng::tag("sim-folds");
inline constexpr std::uint64_t kStreamSimLearner = rng::tag("sim-learner");

}  // namespace detail

// theta_0 for (n, delta) from `reps` fresh networks, memoized per process.
inline TrueAte cached_true_ate(std::size_t n, double delta, std::size_t reps, std::uint64_t seed) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, double, std::size_t, std::uint64_t>, TrueAte> cache;
  const auto key = std::make_tuple(n, delta, reps, seed);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  InterferenceDgpConfig cfg;
  cfg.n = n;
  cfg.delta = delta;
  cfg.seed = seed;
  const auto t = true_ate(cfg, reps);
  std::lock_guard lock(mu);
  cache.emplace(key, t);
  return t;
}

inline std::uint64_t theta0_seed(const SimConfig& c) {
  return rng::derive(c.master_seed, detail::kStreamTheta0);
}

// Replication r at size n draws its network and data from
// derive(master_seed, sim-rep, n, r); every method sees the same draw.
inline std::uint64_t replication_seed(std::uint64_t master_seed, std::size_t n, std::size_t r) {
  return rng::derive(master_seed, detail::kStreamSimRep, n, r);
}

inline SimResult run_experiment(const SimConfig& config) {
  if (auto errs = config.validate(); !errs.empty()) throw ConfigError(errs);
  if (config.experiment == Experiment::stability) {
    throw ConfigError("stability experiments run through run_stability");
  }
  using clock = std::chrono::steady_clock;
  SimResult result;
  result.experiment = config.experiment;
  result.master_seed = config.master_seed;
  const auto M = config.methods.size();
  const bool estimation = config.needs_estimation();

  struct RepOut {
    double treated = 0.0;
    std::vector<std::optional<double>> theta;
    std::vector<double> training;
    std::vector<double> seconds;
  };

  for (const auto& design : config.designs) {
    for (const auto n : config.n_grid) {
      std::optional<double> theta0;
      if (estimation) theta0 = cached_true_ate(n, design.delta, config.theta0_reps, theta0_seed(config)).value;
      std::vector<RepOut> out(config.reps);
      parallel_for(config.reps, config.workers, [&](std::size_t r) {
        auto& o = out[r];
        o.theta.assign(M, std::nullopt);
        o.training.assign(M, 0.0);
        o.seconds.assign(M, 0.0);
        const auto key = replication_seed(config.master_seed, n, r);
        InterferenceDgpConfig dgp;
        dgp.n = n;
        dgp.delta = design.delta;
        dgp.seed = key;
        Dataset data;
        if (estimation) {
          data = gen_interference_dataset(dgp);
        } else {
          data.space = std::make_shared<const MetricSpace>(gen_er_network(n, design.delta, key));
        }
        if (estimation) o.treated = static_cast<double>(data.treated_count());
        const auto fold_seed = rng::derive(key, detail::kStreamSimFolds);
        for (std::size_t k = 0; k < M; ++k) {
          const auto m = config.methods[k];
          const auto t0 = clock::now();
          if (m == Method::fold_sizes) {
            const auto fa = make_neighborhood_folds(*data.space, design.folds,
                                                    config.exclusion_distance, fold_seed);
            double s = 0.0;
            for (auto v : fa.training_sizes()) s += static_cast<double>(v);
            o.training[k] = s / static_cast<double>(design.folds);
          } else {
            EstimatorConfig ec;
            ec.mode = is_crossfit(m) ? EstimationMode::neighborhood_crossfit : EstimationMode::full_sample;
            ec.folds = design.folds;
            ec.exclusion_distance = config.exclusion_distance;
            ec.moment = config.moment();
            ec.nuisance = config.learner.spec(is_subsample(m) ? Resampling::subsample : Resampling::bootstrap);
            ec.seed = rng::derive(key, detail::kStreamSimLearner);
            if (ec.mode == EstimationMode::full_sample) {
              o.training[k] = static_cast<double>(n);
              try {
                o.theta[k] = fit_full_sample(data, ec).theta_hat;
              } catch (const EstimationError&) {
              } catch (const DataError&) {
              }
            } else {
              const auto fa = make_neighborhood_folds(*data.space, design.folds,
                                                      config.exclusion_distance, fold_seed);
              double s = 0.0;
              for (auto v : fa.training_sizes()) s += static_cast<double>(v);
              o.training[k] = s / static_cast<double>(design.folds);
              try {
                o.theta[k] = fit_crossfit(data, ec, &fa).theta_hat;
              } catch (const EstimationError&) {
              } catch (const DataError&) {
              }
            }
          }
          o.seconds[k] = std::chrono::duration<double>(clock::now() - t0).count();
        }
      });
      for (std::size_t k = 0; k < M; ++k) {
        SimRecord rec;
        rec.n = n;
        rec.delta = design.delta;
        rec.folds = design.folds;
        rec.method = config.methods[k];
        rec.reps = config.reps;
        double treated = 0.0, training = 0.0;
        for (const auto& o : out) {
          treated += o.treated;
          training += o.training[k];
          rec.wall_seconds += o.seconds[k];
          if (o.theta[k]) {
            rec.theta.push_back(*o.theta[k]);
          } else if (rec.method != Method::fold_sizes) {
            ++rec.failures;
          }
        }
        const auto R = static_cast<double>(config.reps);
        rec.mean_treated = estimation ? treated / R : 0.0;
        rec.mean_training_size = training / R;
        if (rec.method != Method::fold_sizes) {
          rec.theta0 = theta0;
          const auto s = summarize_theta(rec.theta, theta0);
          rec.bias = s.bias;
          rec.std_dev = s.std_dev;
        }
        result.records.push_back(std::move(rec));
      }
    }
  }
  return result;
}

inline StabilityReport run_stability(const SimConfig& config) {
  if (auto errs = config.validate(); !errs.empty()) throw ConfigError(errs);
  const auto gen = interference_generator(config.designs.front().delta);
  return measure_neighborhood_stability(gen, config.stability_config(), config.n_grid);
}

// ---------------------------------------------------------------- JSON

inline void to_json(nlohmann::json& j, const SimRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  j = {{"n", r.n},
       {"delta", r.delta},
       {"folds", r.folds},
       {"method", std::string(to_string(r.method))},
       {"theta0", opt(r.theta0)},
       {"bias", opt(r.bias)},
       {"std", opt(r.std_dev)},
       {"mean_treated", r.mean_treated},
       {"mean_training_size", r.mean_training_size},
       {"reps", r.reps},
       {"failures", r.failures},
       {"wall_seconds", r.wall_seconds},
       {"theta", r.theta}};
}

inline void from_json(const nlohmann::json& j, SimRecord& r) {
  auto opt = [&](const char* k) -> std::optional<double> {
    if (j.at(k).is_null()) return std::nullopt;
    return j.at(k).get<double>();
  };
  r.n = j.at("n").get<std::size_t>();
  r.delta = j.at("delta").get<double>();
  r.folds = j.at("folds").get<std::size_t>();
  const auto m = parse_method(j.at("method").get<std::string>());
  if (!m) throw ArgumentError("unknown method in results JSON");
  r.method = *m;
  r.theta0 = opt("theta0");
  r.bias = opt("bias");
  r.std_dev = opt("std");
  r.mean_treated = j.at("mean_treated").get<double>();
  r.mean_training_size = j.at("mean_training_size").get<double>();
  r.reps = j.at("reps").get<std::size_t>();
  r.failures = j.at("failures").get<std::size_t>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.theta = j.at("theta").get<std::vector<double>>();
}

inline void to_json(nlohmann::json& j, const SimResult& r) {
  j = {{"experiment", std::string(to_string(r.experiment))},
       {"master_seed", r.master_seed},
       {"records", r.records}};
}

inline void from_json(const nlohmann::json& j, SimResult& r) {
  const auto e = parse_experiment(j.at("experiment").get<std::string>());
  if (!e) throw ArgumentError("unknown experiment in results JSON");
  r.experiment = *e;
  r.master_seed = j.at("master_seed").get<std::uint64_t>();
  r.records = j.at("records").get<std::vector<SimRecord>>();
}

// ---------------------------------------------------------------- tables

namespace detail {

// RFC 4180: quote fields containing a comma, quote, CR or LF.
inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

inline std::string num(double v) {
  if (!std::isfinite(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

inline std::string fixed(const std::optional<double>& v, int prec) {
  if (!v || !std::isfinite(*v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, *v);
  return buf;
}

inline std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

}  // namespace detail

// One row per (n, delta, folds, method, metric); CRLF line endings.
inline void write_results_csv(std::ostream& os, const SimResult& r) {
  using detail::csv_field;
  using detail::num;
  os << "n,delta,folds,method,metric,value\r\n";
  for (const auto& rec : r.records) {
    const auto prefix = std::to_string(rec.n) + "," + num(rec.delta) + "," + std::to_string(rec.folds) +
                        "," + csv_field(to_string(rec.method)) + ",";
    auto row = [&](const char* metric, const std::string& value) {
      os << prefix << metric << "," << value << "\r\n";
    };
    row("theta0", num(rec.theta0));
    row("bias", num(rec.bias));
    row("std", num(rec.std_dev));
    row("mean_treated", num(rec.mean_treated));
    row("mean_training_size", num(rec.mean_training_size));
    row("reps", std::to_string(rec.reps));
    row("failures", std::to_string(rec.failures));
    row("wall_seconds", num(rec.wall_seconds));
  }
}

inline void write_raw_theta_csv(std::ostream& os, const SimResult& r) {
  using detail::num;
  os << "n,delta,folds,method,index,theta_hat\r\n";
  for (const auto& rec : r.records) {
    for (std::size_t k = 0; k < rec.theta.size(); ++k) {
      os << rec.n << "," << num(rec.delta) << "," << rec.folds << "," << detail::csv_field(to_string(rec.method))
         << "," << k << "," << num(rec.theta[k]) << "\r\n";
    }
  }
}

// Estimation records as bias/std per method and n; fold-size records as one
// column per (delta, K) design.
inline void write_text_tables(std::ostream& os, const SimResult& r) {
  using detail::fixed;
  using detail::pad;
  std::vector<const SimRecord*> est, folds;
  for (const auto& rec : r.records) (rec.method == Method::fold_sizes ? folds : est).push_back(&rec);

  if (!est.empty()) {
    std::vector<Method> methods;
    std::vector<std::tuple<double, std::size_t, std::size_t>> rows;  // delta, folds, n
    for (const auto* rec : est) {
      if (std::find(methods.begin(), methods.end(), rec->method) == methods.end()) methods.push_back(rec->method);
      const auto key = std::make_tuple(rec->delta, rec->folds, rec->n);
      if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
    }
    auto find = [&](const std::tuple<double, std::size_t, std::size_t>& row, Method m) -> const SimRecord* {
      for (const auto* rec : est) {
        if (rec->method == m && std::make_tuple(rec->delta, rec->folds, rec->n) == row) return rec;
      }
      return nullptr;
    };
    constexpr std::size_t kCell = 20;
    os << "Estimates (bias, std of theta_hat)\n";
    os << pad("delta", 6) << pad("n", 7) << pad("theta0", 9) << pad("sum W", 9);
    for (auto m : methods) os << pad(std::string(to_string(m)), kCell);
    os << "\n" << std::string(31, ' ');
    for (std::size_t k = 0; k < methods.size(); ++k) os << pad("bias", 10) << pad("std", 10);
    os << "\n";
    for (const auto& row : rows) {
      const SimRecord* any = find(row, methods.front());
      for (auto m : methods) {
        if (!any) any = find(row, m);
      }
      os << pad(SimConfig::fmt_num(std::get<0>(row)), 6) << pad(std::to_string(std::get<2>(row)), 7)
         << pad(fixed(any ? any->theta0 : std::nullopt, 4), 9)
         << pad(fixed(any ? std::optional<double>(any->mean_treated) : std::nullopt, 2), 9);
      for (auto m : methods) {
        const auto* rec = find(row, m);
        os << pad(fixed(rec ? rec->bias : std::nullopt, 4), 10) << pad(fixed(rec ? rec->std_dev : std::nullopt, 4), 10);
      }
      os << "\n";
    }
  }

  if (!folds.empty()) {
    if (!est.empty()) os << "\n";
    std::vector<std::pair<double, std::size_t>> designs;
    std::vector<std::size_t> ns;
    for (const auto* rec : folds) {
      const auto d = std::make_pair(rec->delta, rec->folds);
      if (std::find(designs.begin(), designs.end(), d) == designs.end()) designs.push_back(d);
      if (std::find(ns.begin(), ns.end(), rec->n) == ns.end()) ns.push_back(rec->n);
    }
    os << "Mean training-fold size\n" << pad("n", 7);
    for (const auto& d : designs) {
      os << pad("delta=" + SimConfig::fmt_num(d.first) + ", K=" + std::to_string(d.second), 18);
    }
    os << "\n";
    for (auto n : ns) {
      os << pad(std::to_string(n), 7);
      for (const auto& d : designs) {
        std::optional<double> v;
        for (const auto* rec : folds) {
          if (rec->n == n && rec->delta == d.first && rec->folds == d.second) v = rec->mean_training_size;
        }
        os << pad(fixed(v, 2), 18);
      }
      os << "\n";
    }
  }
}

enum class OutputFormat { csv, json, text, all };

inline std::optional<OutputFormat> parse_output_format(std::string_view s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "json") return OutputFormat::json;
  if (s == "text") return OutputFormat::text;
  if (s == "all") return OutputFormat::all;
  return std::nullopt;
}

namespace detail {

template <class Writer>
void write_file(const std::filesystem::path& path, Writer&& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  w(os);
  os.flush();
  if (!os) throw IoError("write failed for " + path.string());
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory " + dir.string());
  }
}

}  // namespace detail

// csv: results.csv and raw_theta.csv; json: results.json; text: tables.txt.
inline std::vector<std::filesystem::path> emit_tables(const SimResult& r, const std::filesystem::path& dir,
                                                      OutputFormat fmt = OutputFormat::all) {
  detail::ensure_dir(dir);
  std::vector<std::filesystem::path> written;
  const bool all = fmt == OutputFormat::all;
  if (all || fmt == OutputFormat::csv) {
    detail::write_file(dir / "results.csv", [&](std::ostream& os) { write_results_csv(os, r); });
    detail::write_file(dir / "raw_theta.csv", [&](std::ostream& os) { write_raw_theta_csv(os, r); });
    written.push_back(dir / "results.csv");
    written.push_back(dir / "raw_theta.csv");
  }
  if (all || fmt == OutputFormat::json) {
    detail::write_file(dir / "results.json", [&](std::ostream& os) {
      os << nlohmann::json(r).dump(2) << "\n";
    });
    written.push_back(dir / "results.json");
  }
  if (all || fmt == OutputFormat::text) {
    detail::write_file(dir / "tables.txt", [&](std::ostream& os) { write_text_tables(os, r); });
    written.push_back(dir / "tables.txt");
  }
  return written;
}

inline SimResult read_results_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return nlohmann::json::parse(in).get<SimResult>();
}

}  // namespace nbdml
