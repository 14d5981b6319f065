#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "nbdml/harness.hpp"

using namespace nbdml;

namespace {

const std::filesystem::path kConfigs = std::filesystem::path(NBDML_SOURCE_DIR) / "configs";

bool any_contains(const std::vector<std::string>& errs, const std::string& needle) {
  for (const auto& e : errs) {
    if (e.find(needle) != std::string::npos) return true;
  }
  return false;
}

SimConfig tiny(std::size_t reps = 3) {
  SimConfig c;
  c.n_grid = {200, 300};
  c.reps = reps;
  c.learner.trees = 8;
  c.theta0_reps = 40;
  c.master_seed = 99;
  c.workers = 1;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nbdml_harness_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(Config, ShippedPresetFilesEqualBuiltInPresets) {
  for (auto [file, e] : {std::pair{"table1.yaml", Experiment::table1},
                         std::pair{"table2.yaml", Experiment::table2},
                         std::pair{"stability.yaml", Experiment::stability}}) {
    const auto p = validate_config(kConfigs / file);
    ASSERT_TRUE(p.ok()) << file << ": " << (p.errors.empty() ? "" : p.errors.front());
    EXPECT_EQ(*p.config, preset(e)) << file;
  }
  const auto full = validate_config(kConfigs / "table1_full.yaml");
  ASSERT_TRUE(full.ok());
  EXPECT_EQ(full.config->reps, 5000u);
  EXPECT_EQ(full.config->learner.trees, 500u);
}

TEST(Config, PresetKeyThenOverrides) {
  const auto p = parse_config("preset: table2\nreps: 7\n");
  ASSERT_TRUE(p.ok());
  auto expect = preset(Experiment::table2);
  expect.reps = 7;
  EXPECT_EQ(*p.config, expect);
}

TEST(Config, SingleFoldWithCrossfitRejected) {
  const auto p = parse_config("folds: 1\nmethods: [bootstrap/crossfit]\n");
  EXPECT_FALSE(p.ok());
  EXPECT_TRUE(any_contains(p.errors, "folds must be >= 2"));
  // Without a crossfit method the fold count is never used.
  EXPECT_TRUE(parse_config("folds: 1\nmethods: [bootstrap/full]\n").ok());
}

TEST(Config, LinkProbabilityAboveOneRejectedByDgpValidation) {
  const auto p = parse_config("n_grid: [5]\ndelta: 8\nmethods: [bootstrap/full]\n");
  EXPECT_FALSE(p.ok());
  EXPECT_TRUE(any_contains(p.errors, "n=5, delta=8: link probability"));
}

TEST(Config, SyntaxErrorCarriesLine) {
  const auto p = parse_config("reps: 3\nn_grid: [500, 1000\nworkers: 2\n");
  ASSERT_FALSE(p.ok());
  ASSERT_EQ(p.errors.size(), 1u);
  EXPECT_TRUE(any_contains(p.errors, "syntax error at line"));
}

TEST(Config, EveryViolationReportedAtOnceWithLines) {
  const auto p = parse_config(
      "reps: 0\n"
      "colour: blue\n"
      "learner:\n"
      "  trees: many\n"
      "  propensity_features: y\n"
      "methods: [bootstrap/full, magic]\n");
  ASSERT_FALSE(p.ok());
  EXPECT_TRUE(any_contains(p.errors, "line 2: unknown key 'colour'"));
  EXPECT_TRUE(any_contains(p.errors, "line 4: 'trees' has an invalid value 'many'"));
  EXPECT_TRUE(any_contains(p.errors, "line 5: 'propensity_features' has an unknown value 'y'"));
  EXPECT_TRUE(any_contains(p.errors, "unknown method 'magic'"));
  EXPECT_TRUE(any_contains(p.errors, "reps must be >= 1"));
  EXPECT_GE(p.errors.size(), 5u);
}

TEST(Config, NegativeCountsRejected) {
  const auto p = parse_config("reps: -4\n");
  EXPECT_FALSE(p.ok());
  EXPECT_TRUE(any_contains(p.errors, "line 1: 'reps' has an invalid value"));
}

TEST(Config, SubsampleSettingsNeedSubsampleMethod) {
  const auto p = parse_config("methods: [bootstrap/full]\nlearner: {subsample_scale: 4}\n");
  EXPECT_FALSE(p.ok());
  EXPECT_TRUE(any_contains(p.errors, "subsample settings require a subsample method"));
  EXPECT_TRUE(parse_config("methods: [subsample/full]\nlearner: {subsample_scale: 4}\n").ok());
}

TEST(Config, DesignsExcludeDeltaAndFolds) {
  const auto p = parse_config("delta: 3\ndesigns: [{delta: 3, folds: 5}]\n");
  EXPECT_FALSE(p.ok());
  EXPECT_TRUE(any_contains(p.errors, "'designs' excludes"));
}

TEST(Config, YamlRoundTrip) {
  auto c = tiny();
  c.designs = {{2.5, 3}, {4.0, 2}};
  c.learner.propensity_features = FeatureSet::c_only;
  c.stability.trees_per_unit.reset();
  const auto p = parse_config(to_yaml(c));
  ASSERT_TRUE(p.ok()) << p.errors.front();
  EXPECT_EQ(*p.config, c);
}

TEST(Config, MissingFileIsIoError) {
  EXPECT_THROW(validate_config(kConfigs / "does_not_exist.yaml"), IoError);
}

// ---------------------------------------------------------------- running

TEST(Run, InvalidConfigFailsBeforeCompute) {
  auto c = tiny();
  c.reps = 0;
  EXPECT_THROW(run_experiment(c), ConfigError);
  auto s = preset(Experiment::stability);
  EXPECT_THROW(run_experiment(s), ConfigError);
}

TEST(Run, RecordShapeAndAggregates) {
  const auto c = tiny(4);
  const auto r = run_experiment(c);
  ASSERT_EQ(r.records.size(), c.n_grid.size() * c.methods.size());
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.reps, 4u);
    EXPECT_EQ(rec.theta.size() + rec.failures, 4u);
    ASSERT_TRUE(rec.theta0 && rec.bias && rec.std_dev);
    EXPECT_GE(*rec.bias, 0.0);
    EXPECT_GE(*rec.std_dev, 0.0);
    const auto s = summarize_theta(rec.theta, rec.theta0);
    EXPECT_EQ(*rec.bias, *s.bias);
    if (is_crossfit(rec.method)) {
      EXPECT_LT(rec.mean_training_size, static_cast<double>(rec.n));
    } else {
      EXPECT_EQ(rec.mean_training_size, static_cast<double>(rec.n));
    }
  }
  // Every method sees the same replication data, so treated counts agree.
  EXPECT_EQ(r.records[0].mean_treated, r.records[3].mean_treated);
  // theta_0 is the cached oracle run at the derived seed.
  InterferenceDgpConfig d;
  d.n = 200;
  d.delta = 3.0;
  d.seed = theta0_seed(c);
  EXPECT_EQ(*r.records[0].theta0, true_ate(d, c.theta0_reps).value);
}

TEST(Run, SingleReplicationRepeatsBitIdentically) {
  const auto c = tiny(1);
  const auto a = run_experiment(c);
  const auto b = run_experiment(c);
  EXPECT_TRUE(a.same_estimates(b));
  for (const auto& rec : a.records) EXPECT_FALSE(rec.std_dev.has_value());
}

TEST(Run, WorkerCountDoesNotChangeResults) {
  auto c = tiny(5);
  const auto serial = run_experiment(c);
  c.workers = 3;
  EXPECT_TRUE(serial.same_estimates(run_experiment(c)));
}

TEST(Run, SeedChangesResults) {
  auto c = tiny(2);
  const auto a = run_experiment(c);
  c.master_seed += 1;
  EXPECT_NE(a.records[0].theta, run_experiment(c).records[0].theta);
}

TEST(Run, Table2PresetSmallestCell) {
  auto c = preset(Experiment::table2);
  c.n_grid = {500};
  c.designs = {{3.0, 5}};
  c.workers = 1;
  const auto r = run_experiment(c);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_NEAR(r.records[0].mean_training_size, 74.12, 2.0);
  EXPECT_FALSE(r.records[0].theta0.has_value());
  EXPECT_TRUE(r.records[0].theta.empty());
}

TEST(Run, CollapsedTrainingFoldsCountAsFailures) {
  SimConfig c;
  c.n_grid = {500};
  c.designs = {{8.0, 5}};
  c.reps = 3;
  c.methods = {Method::bootstrap_crossfit};
  c.learner.trees = 5;
  c.theta0_reps = 20;
  c.workers = 1;
  const auto r = run_experiment(c);
  EXPECT_EQ(r.records[0].failures + r.records[0].theta.size(), 3u);
  EXPECT_GE(r.records[0].failures, 1u);
}

TEST(Run, StabilityExperimentRuns) {
  auto c = preset(Experiment::stability);
  c.n_grid = {60, 120};
  c.stability.mc_reps = 2;
  c.stability.diagonal_pairs = 1;
  c.stability.offdiagonal_pairs = 1;
  c.stability.trees_per_unit.reset();
  c.learner.trees = 5;
  c.workers = 1;
  const auto rep = run_stability(c);
  ASSERT_EQ(rep.records.size(), 2u);
  EXPECT_EQ(rep.records[0].trees, 5u);
  EXPECT_FALSE(std::isnan(rep.slope_in_sample));
}

// ---------------------------------------------------------------- output

TEST(Emit, JsonRoundTripsToEqualResult) {
  const auto r = run_experiment(tiny(3));
  const auto j = nlohmann::json(r);
  EXPECT_EQ(j.get<SimResult>(), r);
  const auto dir = temp_dir("json");
  emit_tables(r, dir, OutputFormat::json);
  EXPECT_EQ(read_results_json(dir / "results.json"), r);
  std::filesystem::remove_all(dir);
}

TEST(Emit, EmptyMethodListGivesHeaderOnlyCsv) {
  SimResult empty;
  std::ostringstream a, b;
  write_results_csv(a, empty);
  write_raw_theta_csv(b, empty);
  EXPECT_EQ(a.str(), "n,delta,folds,method,metric,value\r\n");
  EXPECT_EQ(b.str(), "n,delta,folds,method,index,theta_hat\r\n");
}

TEST(Emit, FilesAreByteStable) {
  const auto r = run_experiment(tiny(2));
  const auto d1 = temp_dir("stable1"), d2 = temp_dir("stable2");
  const auto f1 = emit_tables(r, d1);
  emit_tables(r, d2);
  ASSERT_EQ(f1.size(), 4u);
  for (const auto& f : f1) EXPECT_EQ(slurp(f), slurp(d2 / f.filename())) << f;
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST(Emit, AggregatesRecomputableFromRawTheta) {
  const auto r = run_experiment(tiny(4));
  std::ostringstream raw;
  write_raw_theta_csv(raw, r);
  std::map<std::pair<std::size_t, std::string>, std::vector<double>> by;
  std::istringstream in(raw.str());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto f = split(line);
    ASSERT_EQ(f.size(), 6u);
    by[{std::stoul(f[0]), f[3]}].push_back(std::stod(f[5]));
  }
  for (const auto& rec : r.records) {
    const auto& th = by[{rec.n, std::string(to_string(rec.method))}];
    const auto s = summarize_theta(th, rec.theta0);
    EXPECT_NEAR(*s.bias, *rec.bias, 1e-12);
    EXPECT_NEAR(*s.std_dev, *rec.std_dev, 1e-12);
  }
}

TEST(Emit, CsvFieldQuoting) {
  EXPECT_EQ(detail::csv_field("plain"), "plain");
  EXPECT_EQ(detail::csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(detail::csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(detail::csv_field("two\nlines"), "\"two\nlines\"");
}

TEST(Emit, ResultsCsvOneRowPerMetric) {
  const auto r = run_experiment(tiny(2));
  std::ostringstream os;
  write_results_csv(os, r);
  const auto text = os.str();
  const auto rows = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
  EXPECT_EQ(rows, 1 + r.records.size() * 8);
}

TEST(Emit, Table2TextHasThreeDesignGroups) {
  auto c = preset(Experiment::table2);
  c.reps = 3;
  c.workers = 1;
  std::ostringstream os;
  write_text_tables(os, run_experiment(c));
  const auto t = os.str();
  const auto header = t.substr(t.find('\n') + 1);
  const auto first = header.substr(0, header.find('\n'));
  EXPECT_NE(first.find("delta=3, K=5"), std::string::npos);
  EXPECT_NE(first.find("delta=8, K=5"), std::string::npos);
  EXPECT_NE(first.find("delta=5, K=2"), std::string::npos);
  EXPECT_LT(first.find("delta=3, K=5"), first.find("delta=8, K=5"));
  EXPECT_EQ(std::count(t.begin(), t.end(), '\n'), 5);
}

TEST(Emit, UnwritableDirectoryIsIoError) {
  const auto base = temp_dir("blocker");
  std::filesystem::create_directories(base.parent_path());
  { std::ofstream(base) << "x"; }
  EXPECT_THROW(emit_tables(SimResult{}, base / "sub"), IoError);
  std::filesystem::remove(base);
}
