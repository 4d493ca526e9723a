#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "ccmeta/experiment.hpp"

namespace {

namespace fs = std::filesystem;
using ccmeta::ConfigError;
using ccmeta::ExperimentConfig;
using ccmeta::ExperimentKind;
using ccmeta::KeyValueConfig;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ccmeta_experiment_test_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig config_from(const std::string& text) {
  return ExperimentConfig::from_kv(KeyValueConfig::parse(text));
}

std::vector<std::string> issues_of(const std::string& text) {
  try {
    (void)config_from(text);
  } catch (const ConfigError& e) {
    return e.issues();
  }
  return {};
}

bool mentions(const std::vector<std::string>& issues, const std::string& needle) {
  for (const auto& s : issues) {
    if (s.find(needle) != std::string::npos) return true;
  }
  return false;
}

std::size_t count_rows(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += !line.empty();
  return n == 0 ? 0 : n - 1;
}

TEST(KeyValue, ParsesCommentsListsAndWhitespace) {
  const auto kv = KeyValueConfig::parse(
      "# comment\n"
      "  network.bs_density = 2e-4   # trailing\n"
      "\n"
      "grid.q = 0.1, 0.2 ,0.3\n");
  std::vector<std::string> issues;
  EXPECT_DOUBLE_EQ(kv.get_double("network.bs_density", 0.0, issues), 2e-4);
  const auto q = kv.get_doubles("grid.q", {}, issues);
  ASSERT_EQ(q.size(), 3u);
  EXPECT_DOUBLE_EQ(q[1], 0.2);
  EXPECT_TRUE(issues.empty());
}

TEST(KeyValue, ReportsEveryMalformedLine) {
  try {
    (void)KeyValueConfig::parse("a = 1\nno equals sign\na = 2\n = 3\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    ASSERT_EQ(e.issues().size(), 3u);
    EXPECT_TRUE(mentions(e.issues(), "line 2"));
    EXPECT_TRUE(mentions(e.issues(), "duplicate key 'a'"));
    EXPECT_TRUE(mentions(e.issues(), "line 4"));
  }
}

TEST(Config, DefaultsEncodeTheReferenceNetwork) {
  const auto c = config_from("");
  EXPECT_EQ(c.kind, ExperimentKind::kMetadist);
  EXPECT_DOUBLE_EQ(c.network.bs_density, 1e-4);
  EXPECT_DOUBLE_EQ(c.network.user_density, 3e-4);
  EXPECT_DOUBLE_EQ(c.network.pathloss_exponent, 3.0);
  EXPECT_DOUBLE_EQ(c.network.ratio_threshold, 0.5);
  EXPECT_EQ(c.ratio_grid, (std::vector<double>{0.4, 0.5, 0.6}));
  EXPECT_EQ(c.classes.size(), 2u);
  EXPECT_EQ(c.methods.size(), 2u);

  const auto delay = ExperimentConfig::defaults(ExperimentKind::kDelay);
  EXPECT_EQ(delay.theta_db_grid, (std::vector<double>{1.0, 5.0}));
  EXPECT_EQ(delay.q_grid.size(), 100u);
  EXPECT_DOUBLE_EQ(delay.q_grid.back(), 1.0);
}

TEST(Config, ThetaIsGivenInDecibels) {
  const auto c = config_from("network.theta_db = 5\n");
  EXPECT_NEAR(c.network.sir_threshold, 3.1622776601683795, 1e-15);
  EXPECT_DOUBLE_EQ(c.network_at(0.5, -10.0).sir_threshold, 0.1);
}

TEST(Config, DecibelTableIsExact) {
  const double table[] = {0.1,
                          0.12589254117941673,
                          0.15848931924611134,
                          0.19952623149688797,
                          0.251188643150958,
                          0.31622776601683794,
                          0.3981071705534972,
                          0.5011872336272722,
                          0.6309573444801932,
                          0.7943282347242815,
                          1.0,
                          1.2589254117941673,
                          1.5848931924611136,
                          1.9952623149688795,
                          2.51188643150958,
                          3.1622776601683795,
                          3.9810717055349722,
                          5.011872336272722,
                          6.309573444801933,
                          7.943282347242816,
                          10.0};
  for (int db = -10; db <= 10; ++db) {
    EXPECT_DOUBLE_EQ(ccmeta::db_to_linear(db), table[db + 10]) << db << " dB";
    EXPECT_NEAR(ccmeta::linear_to_db(table[db + 10]), db, 1e-12);
  }
}

TEST(Config, ListsEveryViolation) {
  const auto issues = issues_of(
      "experiment.kind = moments\n"
      "network.pathloss_exponent = 1.5\n"
      "grid.q = 0.7, 0.3\n"
      "grid.xi = 0.1, 1.4\n"
      "grid.ratio =\n"
      "sim.draws = many\n"
      "network.colour = blue\n");
  EXPECT_TRUE(mentions(issues, "network.pathloss_exponent must be > 2"));
  EXPECT_TRUE(mentions(issues, "grid.q must be sorted"));
  EXPECT_TRUE(mentions(issues, "grid.xi: value 1.4 out of range"));
  EXPECT_TRUE(mentions(issues, "grid.ratio: '' is not a number"));
  EXPECT_TRUE(mentions(issues, "sim.draws: 'many' is not a number"));
  EXPECT_TRUE(mentions(issues, "unknown key 'network.colour'"));
  EXPECT_GE(issues.size(), 6u);
}

TEST(Config, RejectsUnknownKindsAndMismatchedCommands) {
  EXPECT_TRUE(mentions(issues_of("experiment.kind = plot\n"), "unknown kind 'plot'"));
  const auto kv = KeyValueConfig::parse("experiment.kind = delay\n");
  EXPECT_THROW(ExperimentConfig::from_kv(kv, ExperimentKind::kMoments), ConfigError);
  EXPECT_EQ(ExperimentConfig::from_kv(kv, ExperimentKind::kDelay).kind, ExperimentKind::kDelay);
  EXPECT_TRUE(mentions(issues_of("fixed_point.coupling = moment_functional\n"), "needs fixed_point.method = beta"));
}

TEST(Config, CanonicalFormRoundTrips) {
  const auto c = config_from(
      "experiment.kind = compare\n"
      "grid.x = 0.1, 0.5, 0.9\n"
      "grid.classes = CEU\n"
      "metadist.methods = beta\n"
      "network.theta_db = 2.5\n"
      "seed.root = 99\n");
  const auto again = ExperimentConfig::from_kv(c.to_kv());
  EXPECT_EQ(c.to_kv().entries(), again.to_kv().entries());
  EXPECT_EQ(again.x_grid, (std::vector<double>{0.1, 0.5, 0.9}));
  EXPECT_EQ(again.seed, 99u);
}

TEST(Manifest, EmptyRunHoldsConfigOnly) {
  const auto c = ExperimentConfig::defaults(ExperimentKind::kMoments);
  std::ostringstream out;
  ccmeta::write_manifest(c, {}, out);
  const std::string text = out.str();
  EXPECT_NE(text.find("config.experiment.kind=moments"), std::string::npos);
  EXPECT_NE(text.find("library.version="), std::string::npos);
  EXPECT_NE(text.find("output.count=0"), std::string::npos);
  EXPECT_NE(text.find("flag.count=0"), std::string::npos);
  EXPECT_NE(text.find("status=ok"), std::string::npos);
}

TEST(Run, MomentsAgreeWithQuadratureAndFlagTheMixture) {
  const auto dir = fresh_dir("moments");
  auto c = config_from(
      "experiment.kind = moments\n"
      "grid.q = 0.5\n"
      "grid.theta_db = 0\n"
      "moments.orders = 1, 2\n");
  c.output_dir = dir.string();
  const auto report = ccmeta::run_experiment(c);
  EXPECT_EQ(report.exit_status(), 0);
  EXPECT_EQ(count_rows(dir / "moments.csv"), 4u);
  for (const auto& f : report.flags) EXPECT_EQ(f.what, "ceu_mixture_vs_exact") << f.point;
  EXPECT_EQ(report.flags.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "run_manifest.txt"));
}

TEST(Run, DelayAgreesWithMomentOracleIncludingDivergence) {
  const auto dir = fresh_dir("delay");
  auto c = ExperimentConfig::defaults(ExperimentKind::kDelay);
  c.output_dir = dir.string();
  const auto report = ccmeta::run_experiment(c);
  EXPECT_EQ(report.exit_status(), 0);
  EXPECT_TRUE(report.flags.empty());
  EXPECT_EQ(count_rows(dir / "delay.csv"), 400u);
  EXPECT_EQ(count_rows(dir / "critical_activity.csv"), 4u);
}

TEST(Run, PrintedDelaySignIsFlaggedAtEveryPoint) {
  const auto dir = fresh_dir("printed");
  auto c = config_from(
      "experiment.kind = delay\n"
      "delay.sign = printed\n"
      "grid.q = 0.1, 0.2\n"
      "grid.theta_db = 5\n"
      "grid.classes = CCU\n");
  c.output_dir = dir.string();
  const auto report = ccmeta::run_experiment(c);
  ASSERT_EQ(report.flags.size(), 2u);
  const std::string manifest = slurp(dir / "run_manifest.txt");
  EXPECT_NE(manifest.find("flag.count=2"), std::string::npos);
  EXPECT_NE(manifest.find("delay_vs_moment_oracle at R0.5_th5dB_q0.1_CCU"), std::string::npos);
  EXPECT_NE(manifest.find("delay_vs_moment_oracle at R0.5_th5dB_q0.2_CCU"), std::string::npos);
  // The printed form stays below one, the true delay above.
  EXPECT_LT(report.flags[0].value, 1.0);
  EXPECT_GT(report.flags[0].reference, 1.0);
}

TEST(Run, ManifestAndOutputsAreStableAcrossReruns) {
  const auto dir = fresh_dir("stable");
  auto c = config_from(
      "experiment.kind = metadist\n"
      "grid.x_steps = 20\n"
      "grid.ratio = 0.5\n"
      "grid.classes = CEU\n");
  c.output_dir = dir.string();
  (void)ccmeta::run_experiment(c);
  const std::string first = slurp(dir / "run_manifest.txt");
  const std::string curve = slurp(dir / "meta_ceu_gil_pelaez_R0.5_th0dB_q1.csv");
  (void)ccmeta::run_experiment(c);
  EXPECT_EQ(first, slurp(dir / "run_manifest.txt"));
  EXPECT_EQ(curve, slurp(dir / "meta_ceu_gil_pelaez_R0.5_th0dB_q1.csv"));

  // The manifest is itself a config that reproduces the run.
  const auto reloaded = ccmeta::load_experiment_config((dir / "run_manifest.txt").string());
  EXPECT_EQ(reloaded.to_kv().entries(), c.to_kv().entries());
}

TEST(Run, MetadistCurvesRoundTripThroughCsv) {
  const auto dir = fresh_dir("roundtrip");
  auto c = config_from(
      "experiment.kind = metadist\n"
      "grid.x_steps = 25\n"
      "grid.ratio = 0.4\n"
      "grid.q = 0.6\n"
      "grid.theta_db = 3\n");
  c.output_dir = dir.string();
  const auto report = ccmeta::run_experiment(c);
  EXPECT_EQ(report.files.size(), 5u);
  const auto p = c.network_at(0.4, 3.0);
  for (auto cls : {ccmeta::UserClass::kCenter, ccmeta::UserClass::kEdge}) {
    for (auto m : {ccmeta::MetaMethod::kGilPelaez, ccmeta::MetaMethod::kBeta}) {
      const auto expected = ccmeta::meta_distribution(p, {0.6}, cls, m, c.x_grid);
      const std::string name = "meta_" + ccmeta::detail::lower(ccmeta::to_string(cls)) + "_" +
                               std::string(ccmeta::to_string(m)) + "_R0.4_th3dB_q0.6.csv";
      std::ifstream in(dir / name);
      const auto got = ccmeta::read_curve_csv(in);
      EXPECT_EQ(got.grid, expected.grid) << name;
      EXPECT_EQ(got.values, expected.values) << name;
    }
  }
}

TEST(Run, FixedPointTableAndCurves) {
  const auto dir = fresh_dir("fixed_point");
  auto c = config_from(
      "experiment.kind = fixed_point\n"
      "fixed_point.method = beta\n"
      "grid.xi = 0.05, 0.1\n");
  c.output_dir = dir.string();
  const auto report = ccmeta::run_experiment(c);
  EXPECT_EQ(report.exit_status(), 0);
  EXPECT_EQ(count_rows(dir / "fixed_point.csv"), 4u);
  EXPECT_TRUE(fs::exists(dir / "fixed_point_ceu_R0.5_th0dB_xi0.1.csv"));
}

TEST(Run, SimulationIsDeterministicAcrossWorkerCounts) {
  const std::string text =
      "experiment.kind = simulate\n"
      "sim.window = 800\n"
      "sim.geometries = 1\n"
      "sim.draws = 60\n"
      "sim.min_attempts = 10\n"
      "grid.q = 0.5\n"
      "grid.theta_db = 0\n";
  const auto a_dir = fresh_dir("sim_a");
  const auto b_dir = fresh_dir("sim_b");
  auto a = config_from(text);
  a.output_dir = a_dir.string();
  auto b = config_from(text + "run.jobs = 2\n");
  b.output_dir = b_dir.string();
  const auto ra = ccmeta::run_experiment(a);
  (void)ccmeta::run_experiment(b);
  EXPECT_EQ(ra.exit_status(), 0);
  EXPECT_EQ(slurp(a_dir / "links_R0.5_th0dB_q0.5.csv"), slurp(b_dir / "links_R0.5_th0dB_q0.5.csv"));
  EXPECT_EQ(slurp(a_dir / "sim_summary.csv"), slurp(b_dir / "sim_summary.csv"));
}

TEST(Run, QueueSimulationWritesSummary) {
  const auto dir = fresh_dir("queue");
  auto c = config_from(
      "experiment.kind = simulate\n"
      "sim.mode = queue\n"
      "sim.window = 600\n"
      "sim.slots = 400\n"
      "sim.warmup = 100\n"
      "grid.xi = 0.02, 0.05\n"
      "grid.theta_db = 0\n");
  c.output_dir = dir.string();
  const auto report = ccmeta::run_experiment(c);
  EXPECT_EQ(report.exit_status(), 0);
  EXPECT_EQ(count_rows(dir / "queue_summary.csv"), 4u);
  EXPECT_TRUE(fs::exists(dir / "queue_links_R0.5_th0dB_xi0.05.csv"));
}

TEST(Run, CompareReportsZScoresAndRecordsFailures) {
  const auto dir = fresh_dir("compare");
  auto c = config_from(
      "experiment.kind = compare\n"
      "sim.window = 800\n"
      "sim.geometries = 1\n"
      "sim.draws = 100\n"
      "sim.min_attempts = 50\n"
      "grid.q = 0.5\n"
      "grid.theta_db = 0\n"
      "grid.x_steps = 20\n");
  c.output_dir = dir.string();
  const auto ok = ccmeta::run_experiment(c);
  EXPECT_EQ(ok.exit_status(), 0);
  EXPECT_EQ(count_rows(dir / "compare.csv"), 4u);
  EXPECT_EQ(count_rows(dir / "compare_meta.csv"), 2u);

  // No link reaches the attempt floor: the meta estimate fails and is recorded.
  c.sim.min_attempts = 1000;
  const auto bad = ccmeta::run_experiment(c);
  EXPECT_NE(bad.exit_status(), 0);
  EXPECT_EQ(bad.failures.size(), 2u);
  EXPECT_NE(slurp(dir / "run_manifest.txt").find("status=failed"), std::string::npos);
}

}  // namespace
