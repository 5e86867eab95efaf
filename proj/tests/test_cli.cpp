#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"
#include "subaction/orbits.hpp"
#include "subaction/systems.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

fs::path scratch() {
  static fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("subaction_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Run run(const std::string& args, const fs::path& cwd = {}) {
  auto errf = scratch() / "stderr.txt";
  std::string cmd = std::string(SUBACTION_CLI_PATH) + " " + args + " 2>" + errf.string();
  if (!cwd.empty()) cmd = "cd " + cwd.string() + " && " + cmd;
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(errf);
  return r;
}

std::string path(const std::string& name) { return (scratch() / name).string(); }

json read_json(const std::string& name) { return json::parse(slurp(scratch() / name)); }

std::vector<std::vector<std::string>> read_csv(const std::string& name) {
  std::vector<std::vector<std::string>> rows;
  std::stringstream ss(slurp(scratch() / name));
  std::string line;
  while (std::getline(ss, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    rows.push_back(cells);
  }
  return rows;
}

// Exactly one line on stderr, of the form "error: <kind>: ...".
void expect_error_line(const Run& r, const std::string& kind) {
  EXPECT_EQ(r.err.rfind("error: " + kind + ": ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
}

}  // namespace

TEST(CliSolve, GoldenMeanDefaultConverges) {
  auto r = run("solve --system gms:8 --observable edgecost:default --C auto --json " + path("gms.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = read_json("gms.json");
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_LE(j["residual"].get<double>(), 1e-10);
  EXPECT_TRUE(j["pass"].get<bool>());
}

TEST(CliSolve, NontrivialEdgeCostMatchesKarp) {
  auto r = run("solve --system gms:8 --observable edgecost:0.3,1,-0.2 --json " + path("gms2.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = read_json("gms2.json");
  // Minimum cycle mean over the two simple cycles 0->0 and 0->1->0.
  EXPECT_DOUBLE_EQ(j["phibar"]["value"].get<double>(), std::min(0.3, (1.0 - 0.2) / 2));
  EXPECT_EQ(j["phibar"]["method"], "exact-karp");
  EXPECT_LE(j["residual"].get<double>(), 1e-10);
}

TEST(CliSolve, ZeroObservableGivesZeroSubaction) {
  auto r = run("solve --system cat --observable zero --grid 16 --out " + path("zero.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = read_csv("zero.csv");
  ASSERT_EQ(rows.size(), 1u + 16 * 16);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"x", "y", "value"}));
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(std::stod(rows[i][2]), 0.0);
}

TEST(CliSolve, CosineWithZeroCostDivergesWithWitness) {
  // With C = 0 the fixed point needs min phi = phibar; cos1 has min -1 below its periodic minimum.
  auto r = run("solve --system cat --observable cos1 --grid 32 --C 0 --json " + path("div.json"));
  EXPECT_EQ(r.code, 2);
  expect_error_line(r, "divergence");
  auto j = read_json("div.json");
  EXPECT_FALSE(j["pass"].get<bool>());
  ASSERT_TRUE(j.contains("divergence"));
  EXPECT_LT(j["divergence"]["slope"].get<double>(), 0.0);
  EXPECT_GE(j["divergence"]["witness"]["points"].size(), 2u);
}

TEST(CliSolve, CoscosWithZeroCostIsSolvable) {
  // coscos attains its minimum 0 at the fixed point, so C = 0 still admits u = 0.
  auto r = run("solve --system cat --observable coscos --grid 32 --C 0 --json " + path("cc0.json"));
  EXPECT_EQ(r.code, 0) << r.err;
  auto j = read_json("cc0.json");
  EXPECT_EQ(j["phibar"]["value"].get<double>(), 0.0);
}

TEST(CliSolve, GridPolicyMakesPerturbedLatticeSolvable) {
  auto base = std::string("solve --system pcat:1e-3:7 --observable coscos --grid 16 --C 3 ");
  EXPECT_EQ(run(base + "--phibar 0").code, 2);
  auto r = run(base + "--phibar grid --json " + path("pcat.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = read_json("pcat.json");
  EXPECT_EQ(j["phibar"]["method"], "grid-karp");
  EXPECT_GT(j["phibar"]["value"].get<double>(), 0.0);
}

TEST(CliShadow, ReferenceRunPasses) {
  auto r = run("shadow --system cat --len 200 --noise 1e-4 --seed 7 --json " + path("sh.json") + " --out " +
               path("sh.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = read_json("sh.json");
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["bounds"].size(), 3u);
  for (const auto& b : j["bounds"]) EXPECT_TRUE(b["pass"].get<bool>());
  auto rows = read_csv("sh.csv");
  EXPECT_EQ(rows[0], (std::vector<std::string>{"i", "x", "y", "shadow_x", "shadow_y", "delta", "dist"}));
  EXPECT_EQ(rows.size(), 202u);
}

TEST(CliShadow, ZeroNoiseGivesZeroDistances) {
  auto r = run("shadow --system cat --len 100 --noise 0 --out " + path("sh0.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = read_csv("sh0.csv");
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(std::stod(rows[i][6]), 0.0);
}

TEST(CliShadow, PeriodicResidual) {
  auto r = run("shadow --periodic --len 12 --json " + path("shp.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = read_json("shp.json");
  EXPECT_TRUE(j["periodic"].get<bool>());
  EXPECT_EQ(j["n"], 12);
  EXPECT_LE(j["period_residual"].get<double>(), 1e-10);
}

TEST(CliShadow, PointsFileRoundTrip) {
  // A true orbit loaded from CSV shadows itself.
  auto sys = subaction::DynamicalSystem::cat_map();
  std::ofstream f(path("pts.csv"));
  f << "x,y\n";
  subaction::Vec2 p{0.25, 0.5};  // (2/4+2/4, 1/4+2/4) stays on the quarter lattice exactly
  for (int i = 0; i < 10; ++i) {
    f << p.x << "," << p.y << "\n";
    p = sys.map(p);
  }
  f.close();
  auto r = run("shadow --points " + path("pts.csv") + " --json " + path("ptsr.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json("ptsr.json")["max_dist"].get<double>(), 0.0);
}

TEST(CliPeriodic, CensusMatchesDeterminant) {
  auto r = run("periodic --system cat --len 6 --json " + path("per.json") + " --out " + path("per.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = read_json("per.json");
  EXPECT_TRUE(j["census_pass"].get<bool>());
  for (const auto& row : j["per_period"])
    EXPECT_EQ(row["fixed_points_of_f^n"].get<long long>(), subaction::cat_periodic_count(row["n"].get<int>()));
}

TEST(CliEbar, ShiftKarpAndSweepBracket) {
  auto r = run("ebar --system gms:8 --observable edgecost:0.3,1,-0.2 --len 20 --json " + path("eb.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = read_json("eb.json");
  EXPECT_DOUBLE_EQ(j["estimate"]["value"].get<double>(), 0.3);
  // Min-plus oracle over every admissible 20-step symbol path: w00, w01, w10, no 11.
  const double w[2][2] = {{0.3, 1.0}, {-0.2, std::numeric_limits<double>::infinity()}};
  std::array<double, 2> best{0.0, 0.0};
  for (int k = 0; k < 20; ++k) {
    std::array<double, 2> nb{std::min(best[0] + w[0][0], best[1] + w[1][0]), best[0] + w[0][1]};
    best = nb;
  }
  double floor20 = std::min(best[0], best[1]) / 20;
  EXPECT_GE(j["sweep"]["value"].get<double>(), floor20 - 1e-12);
  EXPECT_LT(floor20, 0.3);  // a window may start mid-cycle and dip below the ergodic minimum
}

TEST(CliManifold, LinearMapGraphIsZero) {
  auto r = run("manifold --system cat --len 20 --out " + path("mf.csv") + " --gnuplot " + path("mf.gp"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = read_csv("mf.csv");
  EXPECT_EQ(rows[0], (std::vector<std::string>{"v", "G"}));
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_LE(std::fabs(std::stod(rows[i][1])), 1e-12);
  EXPECT_NE(slurp(scratch() / "mf.gp").find(path("mf.csv")), std::string::npos);
}

TEST(CliVerify, OnlyOperatorLawsWithJsonSchema) {
  auto r = run("verify --only operator_laws --json " + path("ver.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1) << r.out;
  EXPECT_EQ(r.out.rfind("PASS", 0), 0u);
  auto j = read_json("ver.json");
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["kind"], "verify");
  EXPECT_TRUE(j["all_pass"].get<bool>());
  ASSERT_EQ(j["checks"].size(), 1u);
  const auto& c = j["checks"][0];
  for (const char* k : {"name", "anchor", "pass", "lhs", "rhs", "slack", "runtime_s"}) EXPECT_TRUE(c.contains(k)) << k;
  EXPECT_EQ(c["name"], "operator_laws");
  EXPECT_FALSE(c["anchor"].get<std::string>().empty());
}

TEST(CliVerify, FilterByCriterionNumber) {
  auto r = run("verify --only 10");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("census"), std::string::npos);
}

TEST(CliConfig, FileKeysAndFlagOverrides) {
  std::ofstream(path("cfg.json")) << R"({"command": "solve", "system": "gms:8", "observable": "edgecost:0.3,1,-0.2",
                                        "phibar": "karp", "tol": 1e-10})";
  auto r = run("solve --config " + path("cfg.json") + " --json " + path("cfgr.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json("cfgr.json")["observable"], "edgecost:0.3,1,-0.2");
  r = run("solve --config " + path("cfg.json") + " --observable edgecost:default --json " + path("cfgr2.json"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json("cfgr2.json")["observable"], "edgecost:default");
}

TEST(CliConfig, UnknownKeyRejected) {
  std::ofstream(path("bad.json")) << R"({"system": "cat", "colour": "blue"})";
  auto r = run("solve --config " + path("bad.json"));
  EXPECT_EQ(r.code, 1);
  expect_error_line(r, "config");
  EXPECT_NE(r.err.find("colour"), std::string::npos);
}

TEST(CliConfig, FailurePathsAreSingleLine) {
  std::ofstream(path("wrongtype.json")) << R"({"grid": "big"})";
  std::ofstream(path("wrongcmd.json")) << R"({"command": "shadow"})";
  std::ofstream(path("broken.json")) << "{ not json";
  struct Case {
    std::string args, kind;
  };
  for (const auto& c : std::vector<Case>{{"solve --config " + path("wrongtype.json"), "config"},
                                         {"solve --config " + path("wrongcmd.json"), "config"},
                                         {"solve --config " + path("broken.json"), "config"},
                                         {"solve --config " + path("missing.json"), "config"},
                                         {"solve --system torus", "config"},
                                         {"solve --grid abc", "config"},
                                         {"solve --C lots", "config"},
                                         {"shadow --system gms:8", "config"},
                                         {"verify --only nonsense", "config"},
                                         {"solve --no-such-flag", "usage"},
                                         {"", "usage"}}) {
    auto r = run(c.args);
    EXPECT_EQ(r.code, 1) << c.args;
    expect_error_line(r, c.kind);
  }
}

TEST(CliDeterminism, ByteIdenticalOutputs) {
  for (int k = 0; k < 2; ++k) {
    std::string s = std::to_string(k);
    ASSERT_EQ(run("solve --system cat --observable cos1 --grid 40 --out " + path("d" + s + ".csv") + " --json " +
                  path("d" + s + ".json"))
                  .code,
              0);
    ASSERT_EQ(run("shadow --len 80 --seed 3 --out " + path("s" + s + ".csv") + " --json " + path("s" + s + ".json"))
                  .code,
              0);
  }
  for (const char* stem : {"d", "s"})
    for (const char* ext : {".csv", ".json"}) {
      auto a = slurp(scratch() / (std::string(stem) + "0" + ext));
      EXPECT_FALSE(a.empty());
      EXPECT_EQ(a, slurp(scratch() / (std::string(stem) + "1" + ext))) << stem << ext;
    }
}

TEST(CliConfig, SampleConfigsRun) {
  auto dir = scratch() / "configs";
  fs::create_directories(dir);
  int ran = 0;
  for (const auto& e : fs::directory_iterator(SUBACTION_CONFIG_DIR)) {
    auto cfg = json::parse(slurp(e.path()));
    std::string cmd = cfg["command"];
    if (cmd == "verify") continue;  // the acceptance binary covers the full suite
    auto r = run(cmd + " --config " + e.path().string(), dir);
    EXPECT_EQ(r.code, 0) << e.path() << ": " << r.err;
    if (cfg.contains("json")) {
      EXPECT_TRUE(fs::exists(dir / cfg["json"].get<std::string>())) << e.path();
    }
    ++ran;
  }
  EXPECT_GE(ran, 5);
}
