#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "vibnorm/report.hpp"

using namespace vibnorm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json minimal_config() {
  return json::parse(R"({
    "system": {"type": "example1", "n": 8},
    "positions": [1, 8],
    "r": 2,
    "T": 1.5,
    "viscosities": [1, 2, 3]
  })");
}

std::string error_text(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

fs::path scratch_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("vibnorm_cli_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VIBNORM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, ParsesMinimalDocumentWithDefaults) {
  const RunConfig cfg = parse_config(minimal_config());
  EXPECT_EQ(cfg.system.type, "example1");
  EXPECT_EQ(cfg.system.n, 8);
  EXPECT_EQ(cfg.positions, (std::vector<int>{1, 8}));
  EXPECT_EQ(cfg.r, 2);
  EXPECT_EQ(cfg.horizons, (std::vector<double>{1.5}));
  EXPECT_EQ(cfg.viscosities.size(), 3u);
  EXPECT_EQ(cfg.p, 0.5);
  EXPECT_EQ(cfg.tol, 1e-5);
  EXPECT_EQ(cfg.n_1, 599);
  EXPECT_EQ(cfg.b0, 8);
  EXPECT_EQ(cfg.b_max, 12);
  EXPECT_EQ(cfg.mode, Mode::fast);
  EXPECT_EQ(cfg.drop_factor, 0.5);
  EXPECT_FALSE(cfg.gamma_max);
}

TEST(Config, ExpandsViscosityRange) {
  json doc = minimal_config();
  doc["viscosities"] = {{"start", 10}, {"step", 200}, {"count", 20}};
  const RunConfig cfg = parse_config(doc);
  ASSERT_EQ(cfg.viscosities.size(), 20u);
  EXPECT_EQ(cfg.viscosities.front(), 10.0);
  EXPECT_EQ(cfg.viscosities.back(), 3810.0);
}

TEST(Config, ReportsEverySchemaProblem) {
  json doc = minimal_config();
  doc["colour"] = "blue";
  doc["positions"] = {0, 9};
  doc["r_percent"] = 10.0;
  doc["n_1"] = 600;
  const std::string msg = error_text(doc);
  EXPECT_NE(msg.find("unknown key 'colour'"), std::string::npos) << msg;
  EXPECT_NE(msg.find("position 0"), std::string::npos) << msg;
  EXPECT_NE(msg.find("position 9"), std::string::npos) << msg;
  EXPECT_NE(msg.find("either r or r_percent"), std::string::npos) << msg;
  EXPECT_NE(msg.find("n_1 must be odd"), std::string::npos) << msg;
}

TEST(Config, RejectsMissingAndMistypedFields) {
  for (const char* key : {"system", "viscosities", "T"}) {
    json doc = minimal_config();
    doc.erase(key);
    EXPECT_FALSE(error_text(doc).empty()) << key;
  }
  json doc = minimal_config();
  doc.erase("r");
  EXPECT_NE(error_text(doc).find("r or r_percent is required"), std::string::npos);

  doc = minimal_config();
  doc["n_t"] = 2.5;
  EXPECT_NE(error_text(doc).find("n_t must be an integer"), std::string::npos);
  doc = minimal_config();
  doc["mode"] = "slow";
  EXPECT_FALSE(error_text(doc).empty());
  doc = minimal_config();
  doc["p"] = 1.5;
  EXPECT_FALSE(error_text(doc).empty());
  doc = minimal_config();
  doc["drop_factor"] = 1.0;
  EXPECT_FALSE(error_text(doc).empty());
  doc = minimal_config();
  doc["viscosities"] = {1.0, -2.0};
  EXPECT_FALSE(error_text(doc).empty());
  doc = minimal_config();
  doc["system"]["type"] = "bridge";
  EXPECT_FALSE(error_text(doc).empty());
  EXPECT_THROW(parse_config(json::array()), ConfigError);
}

TEST(Config, LoadReportsUnreadableFiles) {
  EXPECT_THROW(load_config("/nonexistent/vibnorm.json"), ConfigError);
  const fs::path dir = scratch_dir("load");
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_config((dir / "bad.json").string()), ConfigError);
  fs::remove_all(dir);
}

TEST(Config, ShippedConfigsParse) {
  for (const auto& entry : fs::directory_iterator(VIBNORM_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(entry.path().string())) << entry.path();
  }
}

TEST(Config, PercentRowsRoundToNearest) {
  json doc = minimal_config();
  doc.erase("r");
  doc["system"]["n"] = 200;
  doc["positions"] = {10};
  doc["r_percent"] = 1.0;
  EXPECT_EQ(resolve_r(parse_config(doc), 200), 2);
  doc["r_percent"] = 0.1;
  EXPECT_EQ(resolve_r(parse_config(doc), 200), 1);
  doc["r_percent"] = 1.25;
  EXPECT_EQ(resolve_r(parse_config(doc), 200), 3);
  doc["r_percent"] = 100.0;
  EXPECT_EQ(resolve_r(parse_config(doc), 200), 200);
}

TEST(Config, ExplicitSystemUsesGivenVector) {
  const json doc = json::parse(R"({
    "system": {"type": "explicit", "M_diag": [1, 2, 3],
               "K_bands": {"diag": [4, 5, 6], "off": [-1, -1]}, "e": [1, 0, -1]},
    "r": 1, "T": 1, "viscosities": [1]
  })");
  const RunConfig cfg = parse_config(doc);
  const SecondOrderSystem sys = build_system(cfg.system, 0);
  EXPECT_EQ(sys.M(1, 1), 2.0);
  EXPECT_EQ(sys.K(0, 1), -1.0);
  EXPECT_EQ(sys.K(2, 2), 6.0);
  EXPECT_EQ(sys.damper_e(2), -1.0);
  EXPECT_EQ(build_system(cfg.system, 2).damper_e(1), 1.0);
}

TEST(Csv, RoundTripsReport) {
  SweepReport rep;
  SweepRow a;
  a.position = 3;
  a.viscosity = 0.1;
  a.T = 2.0 / 3.0;
  a.fast_value = 1.0 / 7.0;
  a.ref_value = 0.142857;
  a.rel_err = std::abs(*a.fast_value - *a.ref_value) / *a.ref_value;
  a.fast_ms = 1.25;
  a.ref_ms = 3.5;
  a.inner_nodes_max = 4097;
  a.adaptive_depth_max = 7;
  SweepRow b;
  b.position = 4;
  b.viscosity = 1e5;
  b.T = 10.0;
  b.fast_failed = true;
  b.ref_value = 2.5;
  SweepRow c;
  c.position = 4;
  c.viscosity = 2e5;
  c.T = 10.0;
  c.fast_value = 3.0;
  rep.rows = {a, b, c};

  const std::string text = to_csv(rep);
  EXPECT_EQ(text.substr(0, text.find('\n')), kCsvHeader);
  const SweepReport back = parse_csv(text);
  ASSERT_EQ(back.rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const SweepRow& x = rep.rows[i];
    const SweepRow& y = back.rows[i];
    EXPECT_EQ(x.position, y.position);
    EXPECT_EQ(x.viscosity, y.viscosity);
    EXPECT_EQ(x.T, y.T);
    EXPECT_EQ(x.fast_value, y.fast_value);
    EXPECT_EQ(x.ref_value, y.ref_value);
    EXPECT_EQ(x.rel_err, y.rel_err);
    EXPECT_EQ(x.fast_ms, y.fast_ms);
    EXPECT_EQ(x.ref_ms, y.ref_ms);
    EXPECT_EQ(x.inner_nodes_max, y.inner_nodes_max);
    EXPECT_EQ(x.adaptive_depth_max, y.adaptive_depth_max);
    EXPECT_EQ(x.fast_failed, y.fast_failed);
    EXPECT_EQ(x.ref_failed, y.ref_failed);
  }
  EXPECT_EQ(to_csv(back), text);
}

TEST(Csv, RejectsMalformedInput) {
  EXPECT_THROW(parse_csv(""), ConfigError);
  EXPECT_THROW(parse_csv("position,viscosity\n"), ConfigError);
  EXPECT_THROW(parse_csv(std::string(kCsvHeader) + "\n1,2,3\n"), ConfigError);
  EXPECT_THROW(parse_csv(std::string(kCsvHeader) + "\n1,2,3,x,,,0,0,0,0\n"), ConfigError);
}

TEST(EffectiveViscosity, FirstPointBelowThreshold) {
  const std::vector<CurvePoint> c = {{1, 10.0}, {2, 9.9}, {3, 4.0}, {4, 3.9}};
  EXPECT_EQ(effective_viscosity(c, 0.5), 3.0);
  EXPECT_EQ(effective_viscosity(c, 0.995), 2.0);
  EXPECT_EQ(effective_viscosity(c, 0.3), std::nullopt);
}

TEST(EffectiveViscosity, FlatCurveHasNone) {
  const std::vector<CurvePoint> c = {{1, 2.0}, {10, 2.0}, {100, 2.0}};
  EXPECT_EQ(effective_viscosity(c), std::nullopt);
}

TEST(EffectiveViscosity, Contracts) {
  const std::vector<CurvePoint> one = {{1, 1.0}};
  const std::vector<CurvePoint> unsorted = {{2, 1.0}, {1, 0.1}};
  const std::vector<CurvePoint> ok = {{1, 1.0}, {2, 0.1}};
  EXPECT_THROW(effective_viscosity(one), ContractViolation);
  EXPECT_THROW(effective_viscosity(unsorted), ContractViolation);
  EXPECT_THROW(effective_viscosity(ok, 0.0), ConfigError);
  EXPECT_THROW(effective_viscosity(ok, 1.0), ConfigError);
}

TEST(Summary, GroupsByPositionAndHorizon) {
  SweepReport rep;
  rep.mode = Mode::both;
  for (int pos : {5, 2}) {
    for (double v : {3.0, 1.0, 2.0}) {
      SweepRow r;
      r.position = pos;
      r.viscosity = v;
      r.T = 1.0;
      r.fast_value = 10.0 / v;
      r.ref_value = 10.0 / v;
      r.rel_err = 0.0;
      r.fast_ms = 1.0;
      r.ref_ms = 4.0;
      rep.rows.push_back(r);
    }
  }
  const auto s = summarize(rep, 0.4);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].position, 5);
  EXPECT_EQ(s[0].rows, 3u);
  EXPECT_EQ(s[0].mean_speedup, 4.0);
  ASSERT_EQ(s[0].effective_viscosity.size(), 1u);
  EXPECT_EQ(s[0].effective_viscosity[0].second, 3.0);
  EXPECT_NE(format_summary(rep, 0.4).find("position 2"), std::string::npos);
}

TEST(Run, FailuresAreRecordedPerRow) {
  json doc = minimal_config();
  doc["gamma_max"] = 1e-6;
  doc["viscosities"] = {0.0, 5.0};
  doc["positions"] = {1};
  const SweepReport rep = run(parse_config(doc));
  ASSERT_EQ(rep.rows.size(), 2u);
  EXPECT_TRUE(rep.rows[0].ok());
  EXPECT_TRUE(rep.rows[1].fast_failed);
  EXPECT_FALSE(rep.rows[1].message.empty());
  EXPECT_FALSE(rep.ok());
}

TEST(Cli, SmokeConfigProducesOneAccurateRow) {
  const fs::path dir = scratch_dir("smoke");
  const std::string cfg = std::string(VIBNORM_CONFIG_DIR) + "/smoke.json";
  ASSERT_EQ(run_cli("run " + cfg + " --out " + dir.string()), 0);
  const SweepReport first = parse_csv(slurp(dir / "smoke.csv"));
  ASSERT_EQ(first.rows.size(), 1u);
  const SweepRow& row = first.rows[0];
  ASSERT_TRUE(row.fast_value && row.ref_value && row.rel_err);
  EXPECT_LE(*row.rel_err, 1e-4);
  EXPECT_TRUE(fs::exists(dir / "smoke_summary.txt"));

  ASSERT_EQ(run_cli("run " + cfg + " --out " + dir.string()), 0);
  const SweepReport second = parse_csv(slurp(dir / "smoke.csv"));
  ASSERT_EQ(second.rows.size(), 1u);
  EXPECT_EQ(*second.rows[0].fast_value, *row.fast_value);
  fs::remove_all(dir);
}

TEST(Cli, BenchWritesTimingTable) {
  const fs::path dir = scratch_dir("bench");
  const std::string cfg = std::string(VIBNORM_CONFIG_DIR) + "/smoke.json";
  ASSERT_EQ(run_cli("bench " + cfg + " --out " + dir.string() + " --threads 1"), 0);
  const std::string text = slurp(dir / "smoke_bench.txt");
  EXPECT_NE(text.find("mean speedup"), std::string::npos);
  EXPECT_NE(text.find("threads 1"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch_dir("codes");
  std::ofstream(dir / "bad.json") << R"({"system": {"type": "example1", "n": 8}, "r": 1})";
  EXPECT_EQ(run_cli("run " + (dir / "bad.json").string() + " --out " + dir.string()), 2);

  json doc = minimal_config();
  doc["positions"] = {1};
  doc["gamma_max"] = 1e-6;
  doc["viscosities"] = {5.0};
  std::ofstream(dir / "fails.json") << doc.dump();
  EXPECT_EQ(run_cli("run " + (dir / "fails.json").string() + " --out " + dir.string()), 1);

  EXPECT_NE(run_cli("run"), 0);
  EXPECT_NE(run_cli("run " + (dir / "bad.json").string() + " --mode sideways"), 0);
  fs::remove_all(dir);
}
