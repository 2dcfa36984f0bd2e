#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "pot/cli.hpp"
#include "pot/errors.hpp"
#include "pot/io.hpp"
#include "support.hpp"

using namespace pot;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("pot_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& s) const { return path_ / s; }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

int cli(std::vector<std::string> args) { return run_cli(args); }

std::string small_config() {
  return R"({"grid": {"n1": 6, "nv": 5, "n2": 15},
             "scenarios": [{"id": "spot", "kind": "spot", "size": 0.001},
                           {"id": "vega", "kind": "vol_parallel", "size": 0.001}],
             "payoffs": [{"id": "fut", "kind": "vix_future"},
                         {"id": "c20", "kind": "vix_call", "strike": 20},
                         {"id": "s100", "kind": "spx_call_t2", "strike": 100}]})";
}

// Writes the config and snapshot, calibrates, and returns the model path.
fs::path calibrated_model(const TempDir& d) {
  write(d / "cfg.json", small_config());
  EXPECT_EQ(cli({"--config", (d / "cfg.json").string(), "synth", "--out", (d / "snap.json").string()}), 0);
  EXPECT_EQ(cli({"--config", (d / "cfg.json").string(), "calibrate", "--snapshot", (d / "snap.json").string(), "--out",
                 (d / "model.json").string()}),
            0);
  return d / "model.json";
}

std::string column(const CsvTable& t, std::size_t row, const std::string& name) { return t.rows[row][t.column(name)]; }

}  // namespace

TEST(FormatDouble, RoundTripsExactly) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
    EXPECT_EQ(std::stod(format_double(x)), x);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
}

TEST(Csv, WriterAndParserRoundTrip) {
  CsvWriter w({"a", "b", "c"});
  w.cell(std::string("x")).cell(1.25).cell(7);
  w.end_row();
  w.cell(std::string("y")).cell(-3e-9).cell(0);
  w.end_row();
  EXPECT_EQ(w.rows(), 2u);
  const CsvTable t = parse_csv(w.str(), "mem");
  EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(std::stod(column(t, 1, "b")), -3e-9);
  EXPECT_THROW(t.column("zzz"), InputError);
}

TEST(Csv, RowShapeIsEnforced) {
  CsvWriter w({"a", "b"});
  w.cell(1.0);
  EXPECT_THROW(w.end_row(), InputError);
  EXPECT_THROW(CsvWriter({"a"}).cell(std::string("x,y")), InputError);
  EXPECT_THROW(parse_csv("a,b\n1,2,3\n", "bad.csv"), InputError);
}

TEST(Json, MalformedInputNamesSourceAndOffset) {
  try {
    parse_json("{\"a\": [1, 2,, 3]}", "cfg.json");
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("cfg.json"), std::string::npos) << m;
    EXPECT_NE(m.find("byte 13"), std::string::npos) << m;
  }
}

TEST(Json, MissingFileIsInputError) { EXPECT_THROW(load_json("/nonexistent/x.json"), InputError); }

TEST(Json, SnapshotRoundTrip) {
  const MarketSnapshot& s = fixtures::desk_snapshot();
  const MarketSnapshot r = snapshot_from_json(parse_json(snapshot_to_json(s).dump(), "mem"));
  EXPECT_EQ(r.spot, s.spot);
  EXPECT_EQ(r.t1, s.t1);
  EXPECT_EQ(r.t2, s.t2);
  EXPECT_EQ(r.vix_future, s.vix_future);
  EXPECT_EQ(r.basis, s.basis);
  EXPECT_EQ(r.spx_t1.strikes, s.spx_t1.strikes);
  EXPECT_EQ(r.spx_t2.vols, s.spx_t2.vols);
  EXPECT_EQ(r.vix.vols, s.vix.vols);
}

TEST(Json, FieldPathsInErrors) {
  Json j = snapshot_to_json(fixtures::desk_snapshot());
  j["smiles"]["vix"]["vols"][2] = "x";
  try {
    snapshot_from_json(j);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("$.smiles.vix.vols[2]"), std::string::npos) << e.what();
  }
  try {
    run_config_from_json(parse_json(R"({"grid": {"n1": "forty"}})", "mem"));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("$.grid.n1"), std::string::npos) << e.what();
  }
  try {
    run_config_from_json(parse_json(R"({"grid": {"n_one": 4}})", "mem"));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("$.grid.n_one"), std::string::npos) << e.what();
  }
}

TEST(Json, ScenarioAndPayoffRoundTrip) {
  BumpSpec b;
  b.id = "v";
  b.kind = BumpKind::vol_t2;
  b.size = 2e-3;
  b.ssr.ssr = 1.1;
  b.ssr.lower_cutoff = 12.0;
  const BumpSpec r = scenario_from_json(scenario_to_json(b));
  EXPECT_EQ(r.id, b.id);
  EXPECT_EQ(r.kind, b.kind);
  EXPECT_EQ(r.size, b.size);
  EXPECT_EQ(r.ssr.ssr, 1.1);
  EXPECT_EQ(r.ssr.lower_cutoff, 12.0);
  EXPECT_EQ(scenarios_from_json(Json::array({scenario_to_json(b)})).size(), 1u);
  EXPECT_EQ(scenarios_from_json(Json{{"scenarios", Json::array({scenario_to_json(b)})}}).size(), 1u);
  EXPECT_THROW(scenarios_from_json(Json::array({scenario_to_json(b), scenario_to_json(b)})), InputError);

  const PayoffSpec p{"c", PayoffKind::forward_start_call, 1.05, -0.5};
  const PayoffSpec q = payoff_from_json(payoff_to_json(p));
  EXPECT_EQ(q.id, p.id);
  EXPECT_EQ(q.kind, p.kind);
  EXPECT_EQ(q.strike, p.strike);
  EXPECT_EQ(q.weight, p.weight);
}

TEST(Json, RunConfigRoundTrip) {
  const RunConfig c = run_config_from_json(parse_json(small_config(), "mem"));
  const RunConfig r = run_config_from_json(run_config_to_json(c));
  EXPECT_EQ(r.grid.n1, 6u);
  EXPECT_EQ(r.grid.n2, 15u);
  EXPECT_EQ(r.scenarios.size(), 2u);
  EXPECT_EQ(r.payoffs.size(), 3u);
  EXPECT_EQ(run_config_to_json(r), run_config_to_json(c));
}

TEST(Json, ModelRoundTripRebuildsTheCoupling) {
  const CalibratedModel& m = fixtures::small_model();
  const Json j = model_to_json(m);
  const CalibratedModel r = model_from_json(parse_json(j.dump(), "mem"));
  const Coupling& a = m.coupling();
  const Coupling& b = r.coupling();
  ASSERT_EQ(a.mass.size(), b.mass.size());
  for (std::size_t k = 0; k < a.mass.size(); ++k) EXPECT_NEAR(b.mass[k], a.mass[k], 1e-15);
  EXPECT_EQ(model_to_json(r).dump(), j.dump());
  Json bad = j;
  bad["format"] = "other";
  EXPECT_THROW(model_from_json(bad), InputError);
}

TEST(AtomicWrite, ReplacesContentAndLeavesNoTempFiles) {
  TempDir d;
  const fs::path p = d / "sub/out.txt";
  atomic_write(p, "first");
  atomic_write(p, "second");
  EXPECT_EQ(read_file(p), "second");
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(p.parent_path())) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, 1u);
}

TEST(Cli, ExitCodesForUsageAndInputErrors) {
  TempDir d;
  EXPECT_EQ(cli({}), 2);
  EXPECT_EQ(cli({"nosuchcommand"}), 2);
  EXPECT_EQ(cli({"calibrate"}), 2);
  EXPECT_EQ(cli({"calibrate", "--snapshot", (d / "missing.json").string()}), 2);
  write(d / "bad.json", "{\"grid\": ");
  EXPECT_EQ(cli({"--config", (d / "bad.json").string(), "synth", "--out", (d / "s.json").string()}), 2);
  write(d / "neg.json", R"({"grid": {"n1": -3}})");
  EXPECT_EQ(cli({"--config", (d / "neg.json").string(), "synth", "--out", (d / "s.json").string()}), 2);
  EXPECT_FALSE(fs::exists(d / "s.json"));
}

TEST(Cli, CalibrationFailureExitsWithOne) {
  TempDir d;
  write(d / "cfg.json", R"({"grid": {"n1": 6, "nv": 5, "n2": 15}, "calibration": {"max_outer": 1}})");
  ASSERT_EQ(cli({"--config", (d / "cfg.json").string(), "synth", "--out", (d / "snap.json").string()}), 0);
  EXPECT_EQ(cli({"--config", (d / "cfg.json").string(), "calibrate", "--snapshot", (d / "snap.json").string(),
                 "--out", (d / "model.json").string()}),
            1);
  EXPECT_FALSE(fs::exists(d / "model.json"));
}

TEST(Cli, CalibrateWritesModelAndDiagnosticsDeterministically) {
  TempDir d;
  const fs::path model = calibrated_model(d);
  for (const char* f : {"model.json", "model.residuals.csv", "model.marginals.csv", "model.trace.csv",
                        "model.smile_fit.csv"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  const std::string first = read_file(model);
  const std::string residuals = read_file(d / "model.residuals.csv");
  ASSERT_EQ(cli({"--config", (d / "cfg.json").string(), "calibrate", "--snapshot", (d / "snap.json").string(),
                 "--out", model.string()}),
            0);
  EXPECT_EQ(read_file(model), first);
  EXPECT_EQ(read_file(d / "model.residuals.csv"), residuals);

  const CsvTable r = parse_csv(residuals, "residuals");
  EXPECT_EQ(r.rows.size(), 30u);
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    EXPECT_LE(std::abs(std::stod(column(r, i, "r_m"))), 1e-8);
    EXPECT_LE(std::abs(std::stod(column(r, i, "r_c"))), 1e-8);
  }
}

TEST(Cli, DiagnoseReportsResidualsAndFisher) {
  TempDir d;
  const fs::path model = calibrated_model(d);
  ASSERT_EQ(cli({"diagnose", "--model", model.string(), "--out", (d / "diag").string()}), 0);
  const Json j = load_json(d / "diag/diagnose.json");
  EXPECT_LE(j.at("max_abs_rm").get<double>(), 1e-8);
  EXPECT_LE(j.at("max_abs_rc").get<double>(), 1e-8);
  EXPECT_TRUE(j.at("fisher").at("cholesky").get<bool>());
  for (const char* f : {"residuals.csv", "marginals.csv", "coupling.csv", "smile_fit.csv"})
    EXPECT_TRUE(fs::exists(d / "diag" / f)) << f;
}

TEST(Cli, RiskRowsCoverEveryPayoffAndScenario) {
  TempDir d;
  const fs::path model = calibrated_model(d);
  for (const char* m : {"lr", "dr", "recalib"}) {
    const fs::path out = d / (std::string(m) + ".csv");
    ASSERT_EQ(cli({"--config", (d / "cfg.json").string(), "risk", m, "--model", model.string(), "--out", out.string()}),
              0)
        << m;
    const CsvTable t = parse_csv(read_file(out), out.string());
    EXPECT_EQ(t.header, (std::vector<std::string>{"payoff", "scenario", "method", "pi0", "sensitivity", "wall_ms"}));
    EXPECT_EQ(t.rows.size(), 6u) << m;
  }
  ASSERT_EQ(cli({"compare", (d / "recalib.csv").string(), (d / "lr.csv").string(), (d / "dr.csv").string(), "--out",
                 (d / "cmp.csv").string()}),
            0);
  EXPECT_EQ(parse_csv(read_file(d / "cmp.csv"), "cmp").rows.size(), 12u);
}

TEST(Cli, RiskIsRepeatable) {
  TempDir d;
  const fs::path model = calibrated_model(d);
  std::vector<std::string> runs;
  for (int k = 0; k < 2; ++k) {
    const fs::path out = d / ("lr" + std::to_string(k) + ".csv");
    ASSERT_EQ(cli({"--config", (d / "cfg.json").string(), "risk", "lr", "--model", model.string(), "--out",
                   out.string()}),
              0);
    const CsvTable t = parse_csv(read_file(out), "lr");
    std::string values;
    for (std::size_t i = 0; i < t.rows.size(); ++i) values += column(t, i, "sensitivity") + ";";
    runs.push_back(values);
  }
  EXPECT_EQ(runs[0], runs[1]);
}

TEST(Cli, ZeroScenarioGivesZeroSensitivities) {
  TempDir d;
  const fs::path model = calibrated_model(d);
  write(d / "zero.json", R"({"scenarios": [{"id": "z", "kind": "vol_parallel", "size": 0}]})");
  for (const char* m : {"lr", "dr"}) {
    const fs::path out = d / (std::string(m) + ".csv");
    ASSERT_EQ(cli({"--config", (d / "cfg.json").string(), "risk", m, "--model", model.string(), "--scenario",
                   (d / "zero.json").string(), "--out", out.string()}),
              0);
    const CsvTable t = parse_csv(read_file(out), "risk");
    ASSERT_EQ(t.rows.size(), 3u);
    for (std::size_t i = 0; i < t.rows.size(); ++i) EXPECT_EQ(std::stod(column(t, i, "sensitivity")), 0.0) << m;
  }
  EXPECT_EQ(cli({"--config", (d / "cfg.json").string(), "risk", "recalib", "--model", model.string(), "--scenario",
                 (d / "zero.json").string(), "--out", (d / "rc.csv").string()}),
            2);
}

TEST(Cli, CompareWithItselfHasZeroGaps) {
  TempDir d;
  write(d / "a.csv",
        "payoff,scenario,method,pi0,sensitivity,wall_ms\nf,s,LR,20,0.5,1\nc,s,LR,2,-0.25,1\nf,v,LR,20,0,1\n");
  ASSERT_EQ(cli({"compare", (d / "a.csv").string(), (d / "a.csv").string(), "--out", (d / "c.csv").string()}), 0);
  const CsvTable t = parse_csv(read_file(d / "c.csv"), "c");
  ASSERT_EQ(t.rows.size(), 3u);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(std::stod(column(t, i, "abs_gap")), 0.0);
    EXPECT_EQ(std::stod(column(t, i, "rel_gap")), 0.0);
  }
}

TEST(Cli, CompareRejectsMismatchedScenarioSets) {
  TempDir d;
  write(d / "a.csv", "payoff,scenario,method,pi0,sensitivity,wall_ms\nf,s,LR,20,0.5,1\n");
  write(d / "b.csv", "payoff,scenario,method,pi0,sensitivity,wall_ms\nf,v,DR,20,0.5,1\n");
  EXPECT_EQ(cli({"compare", (d / "a.csv").string(), (d / "b.csv").string(), "--out", (d / "c.csv").string()}), 2);
  EXPECT_EQ(cli({"compare", (d / "a.csv").string()}), 2);
}

TEST(Cli, ZeroPortfolioBacktestIsEmptyAndSucceeds) {
  TempDir d;
  write(d / "bt.json", R"({"backtest": {"days": 25, "window": 20, "n_portfolios": 0}})");
  ASSERT_EQ(cli({"--config", (d / "bt.json").string(), "backtest", "--out", (d / "rep").string()}), 0);
  const Json s = load_json(d / "rep/summary.json");
  EXPECT_EQ(s.at("n_portfolios").get<int>(), 0);
  EXPECT_TRUE(parse_csv(read_file(d / "rep/stdev.csv"), "stdev").rows.empty());
  EXPECT_TRUE(parse_csv(read_file(d / "rep/daily_pnl.csv"), "pnl").rows.empty());
}

TEST(Cli, DefaultBacktestReproducesGoldenSummary) {
  TempDir d;
  ASSERT_EQ(cli({"--config", POT_CONFIG_DIR "/backtest.json", "backtest", "--out", (d / "rep").string()}), 0);
  const Json got = load_json(d / "rep/summary.json");
  const Json gold = load_json(POT_TEST_DATA_DIR "/backtest_summary.json");
  EXPECT_EQ(got.at("n_portfolios"), gold.at("n_portfolios"));
  EXPECT_EQ(got.at("days"), gold.at("days"));
  EXPECT_EQ(got.at("seed"), gold.at("seed"));
  EXPECT_EQ(got.at("skipped_dates"), gold.at("skipped_dates"));
  EXPECT_NEAR(got.at("pct_pot_wins").get<double>(), gold.at("pct_pot_wins").get<double>(), 1e-12);
  EXPECT_NEAR(got.at("median_stdev_ratio").get<double>(), gold.at("median_stdev_ratio").get<double>(), 1e-9);
  EXPECT_GE(got.at("pct_pot_wins").get<double>(), 0.8);
  const CsvTable roll = parse_csv(read_file(d / "rep/rolling_stdev.csv"), "rolling");
  EXPECT_EQ(roll.rows.size(), 50u * (119u - 20u + 1u));
}

TEST(Cli, LogLevelComesFromTheEnvironment) {
  TempDir d;
  write(d / "cfg.json", small_config());
  ASSERT_EQ(cli({"--config", (d / "cfg.json").string(), "synth", "--out", (d / "snap.json").string()}), 0);
  const std::vector<std::string> args{"--config", (d / "cfg.json").string(), "calibrate", "--snapshot",
                                      (d / "snap.json").string(), "--out", (d / "model.json").string()};
  auto logged = [&](const char* level) {
    if (level) ::setenv("POT_LOG", level, 1);
    else ::unsetenv("POT_LOG");
    ::testing::internal::CaptureStderr();
    const int rc = cli(args);
    const std::string err = ::testing::internal::GetCapturedStderr();
    EXPECT_EQ(rc, 0);
    return err.find("calibrated in") != std::string::npos;
  };
  EXPECT_TRUE(logged("info"));
  EXPECT_FALSE(logged(nullptr));
  EXPECT_FALSE(logged("nonsense"));
  ::unsetenv("POT_LOG");
}
