#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tic/cli.hpp"
#include "tic/grid.hpp"
#include "tic/registry.hpp"

using namespace tic;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream o, e;
  const int code = run_cli(args, o, e);
  return {code, o.str(), e.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("tic_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Preset shrunk to a 21 x 41 grid and few paths.
  json small() const {
    json j = regulator_preset();
    j["grid"] = json::parse(R"({"t": {"min": 0.0, "max": 1.0, "nodes": 21}, "x": [{"min": -2.0, "max": 2.0, "nodes": 41}]})");
    j["simulation"]["n_paths"] = 2000;
    j["simulation"]["dt"] = 0.02;
    j["equilibrium"]["n_paths"] = 2000;
    j["equilibrium"]["radii"] = {2.5};
    j["equilibrium"]["points"] = json::parse(R"([{"t": 0.0, "x": [0.0]}])");
    j["equilibrium"]["deviations"] = json::parse("[[1.0]]");
    j["equilibrium"]["dt"] = 0.025;
    j.erase("output");
    return j;
  }

  std::string write(const json& j, const std::string& name = "cfg.json") const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << j.dump(2);
    return p.string();
  }

  std::string out(const std::string& sub = "out") const { return (dir_ / sub).string(); }

  fs::path dir_;
};

json read_json(const fs::path& p) {
  std::ifstream is(p);
  return json::parse(is);
}

}  // namespace

TEST_F(Cli, ValidatePresetPasses) {
  const CliRun r = run({"validate", "--preset", "regulator", "--out", out()});
  EXPECT_EQ(r.code, kExitPass) << r.err;
  const json j = read_json(fs::path(out()) / "validation.json");
  EXPECT_EQ(j["tool"], "ticctl");
  EXPECT_EQ(j["version"], kToolVersion);
  EXPECT_EQ(j["config_hash"], config_hash(regulator_preset()));
}

TEST_F(Cli, InputErrorsExitTwo) {
  EXPECT_EQ(run({"validate", "--config", (dir_ / "missing.json").string()}).code, kExitInput);
  json j = small();
  j["solver"]["bogus"] = true;
  const CliRun r = run({"solve", "--config", write(j), "--out", out()});
  EXPECT_EQ(r.code, kExitInput);
  EXPECT_NE(r.err.find("/solver/bogus"), std::string::npos) << r.err;
  EXPECT_EQ(run({"validate", "--config", write(small()), "--preset", "regulator"}).code, kExitInput);
  EXPECT_EQ(run({"no-such-command"}).code, kExitInput);
  EXPECT_EQ(run({"--help"}).code, kExitPass);
}

TEST_F(Cli, InvertedControlIntervalFailsValidation) {
  json j = small();
  j["problem"]["controls"]["interval"] = json::parse("[[1.0, -1.0]]");
  const CliRun r = run({"validate", "--config", write(j), "--out", out()});
  EXPECT_EQ(r.code, kExitFail) << r.err;
  const std::string report = read_json(fs::path(out()) / "validation.json").dump();
  EXPECT_NE(report.find("control_set_compact"), std::string::npos);
}

TEST_F(Cli, SolvePresetMatchesClosedForm) {
  const CliRun r = run({"solve", "--preset", "regulator", "--out", out()});
  ASSERT_EQ(r.code, kExitPass) << r.err;
  const GridFunction V = GridFunction::read_csv((fs::path(out()) / "V.csv").string());
  double worst = 0.0;
  for (std::size_t i = 0; i < V.lattice().size(); ++i) {
    const Vec z = V.lattice().coords(i);
    if (std::abs(z[1]) < 2.0 - 1e-9) worst = std::max(worst, std::abs(V.at(i) - 0.25 * (1.0 - z[0])));
  }
  EXPECT_LE(worst, 1e-3);
}

TEST_F(Cli, ResidualFlagsPerturbedAndIncompleteCandidates) {
  const std::string cfg = write(small());
  ASSERT_EQ(run({"solve", "--config", cfg, "--out", out()}).code, kExitPass);
  const fs::path vpath = fs::path(out()) / "V.csv";
  GridFunction V = GridFunction::read_csv(vpath.string());
  V.at(V.lattice().size() / 2) += 1e-3;
  V.write_csv(vpath.string());
  EXPECT_EQ(run({"residual", "--config", cfg, "--candidate", out(), "--out", out("res")}).code, kExitFail);
  fs::remove(fs::path(out()) / "g.csv");
  EXPECT_EQ(run({"residual", "--config", cfg, "--candidate", out(), "--out", out("res")}).code, kExitInput);
}

TEST_F(Cli, ProfitableDeviationExitsOne) {
  // Base u = 0.5 (drift c = 0.25) against u = 1 at t = 0: the quotient is
  // -2 c T (1 - c) - h (1 - c)^2, intercept -0.375.
  json j = small();
  j["equilibrium"]["base"] = json::parse(R"({"constant": [0.5]})");
  j["equilibrium"]["n_paths"] = 20000;
  const CliRun r = run({"equilibrium", "--config", write(j), "--out", out()});
  EXPECT_EQ(r.code, kExitFail) << r.err;
}

TEST_F(Cli, MissingCandidateExitsTwo) {
  const CliRun r = run({"residual", "--config", write(small()), "--candidate", (dir_ / "nowhere").string(), "--out", out()});
  EXPECT_EQ(r.code, kExitInput);
}

TEST_F(Cli, UnstableStepReportsRequiredDt) {
  json j = small();
  j["solver"]["auto_dt"] = false;
  const CliRun r = run({"solve", "--config", write(j), "--out", out()});
  EXPECT_EQ(r.code, kExitFail);
  // dx = 0.1, sigma^2 = 0.25.
  EXPECT_NE(r.err.find("required dt <= 0.04"), std::string::npos) << r.err;
}

TEST_F(Cli, SolveThenResidualRoundTrip) {
  const std::string cfg = write(small());
  const CliRun s = run({"solve", "--config", cfg, "--out", out()});
  ASSERT_EQ(s.code, kExitPass) << s.err;
  for (const char* f : {"V.csv", "g.csv", "control.csv", "f.bin", "f.csv", "convergence.json"}) {
    EXPECT_TRUE(fs::exists(fs::path(out()) / f)) << f;
  }
  EXPECT_TRUE(read_json(fs::path(out()) / "convergence.json")["convergence"]["converged"].get<bool>());
  const CliRun r = run({"residual", "--config", cfg, "--candidate", out(), "--out", out("res")});
  EXPECT_EQ(r.code, kExitPass) << r.err;
  EXPECT_TRUE(fs::exists(fs::path(out("res")) / "residual.json"));
}

TEST_F(Cli, NonConvergenceExitsThreeWithArtifacts) {
  json j = small();
  j["solver"]["max_outer_iters"] = 0;
  const CliRun r = run({"solve", "--config", write(j), "--out", out()});
  EXPECT_EQ(r.code, kExitNotConverged) << r.err;
  EXPECT_TRUE(fs::exists(fs::path(out()) / "V.csv"));
  EXPECT_FALSE(read_json(fs::path(out()) / "convergence.json")["convergence"]["converged"].get<bool>());
}

TEST_F(Cli, TwoStepSizesAreInconclusive) {
  json j = small();
  j["equilibrium"]["h"] = {0.2, 0.1};
  const CliRun r = run({"equilibrium", "--config", write(j), "--out", out()});
  EXPECT_EQ(r.code, kExitInconclusive) << r.err;
  EXPECT_TRUE(fs::exists(fs::path(out()) / "equilibrium.csv"));
}

TEST_F(Cli, SimulateWritesEstimateAndSeed) {
  const CliRun r = run({"simulate", "--config", write(small()), "--seed", "99", "--out", out(), "--write-paths"});
  EXPECT_EQ(r.code, kExitPass) << r.err;
  const json j = read_json(fs::path(out()) / "estimate.json");
  EXPECT_EQ(j["seed"], 99);
  EXPECT_TRUE(fs::exists(fs::path(out()) / "paths.csv"));
}

TEST_F(Cli, RegulatorDemoWithoutNoiseFailsValidation) {
  const CliRun r = run({"regulator-demo", "--sigma", "0", "--out", out()});
  EXPECT_EQ(r.code, kExitFail);
  EXPECT_TRUE(fs::exists(fs::path(out()) / "validation.json"));
}

TEST_F(Cli, RegulatorDemoReproducesCounterexample) {
  const CliRun r = run({"regulator-demo", "--paths", "4000", "--out", out()});
  EXPECT_EQ(r.code, kExitPass) << r.err;
  const json j = read_json(fs::path(out()) / "summary.json");
  EXPECT_TRUE(j["reproduced"].get<bool>());
  EXPECT_TRUE(j["results"]["time_consistent_value_violates_hjb"]["observed"].get<bool>());
}

TEST_F(Cli, RegulatorDemoWithZeroBoundHasNoViolation) {
  // U = {0}: K solves the classical equation, and that is what the demo expects.
  const CliRun r = run({"regulator-demo", "--a", "0", "--paths", "2000", "--out", out()});
  EXPECT_EQ(r.code, kExitPass) << r.err;
  const json j = read_json(fs::path(out()) / "summary.json");
  EXPECT_FALSE(j["results"]["time_consistent_value_violates_hjb"]["expected"].get<bool>());
  EXPECT_FALSE(j["results"]["time_consistent_value_violates_hjb"]["observed"].get<bool>());
}

TEST(CliBinary, ExitCodesReachTheShell) {
  const std::string bin = TICCTL_PATH;
  const auto status = [&](const std::string& args) {
    const int s = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("validate --config /nonexistent/x.json"), 2);
}
