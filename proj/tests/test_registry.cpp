#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "tic/registry.hpp"

using namespace tic;
using nlohmann::json;

namespace {

std::string where_of(const json& j) {
  try {
    parse_config(j);
  } catch (const InputError& e) {
    return e.where();
  }
  return "<no error>";
}

std::string temp_file(const std::string& name, const std::string& body) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << body;
  return p.string();
}

}  // namespace

TEST(Config, PresetParses) {
  const RunConfig c = parse_config(regulator_preset());
  EXPECT_EQ(c.problem.n(), 1u);
  EXPECT_EQ(c.problem.k(), 1u);
  EXPECT_DOUBLE_EQ(c.problem.horizon, 1.0);
  ASSERT_TRUE(c.grid.has_value());
  EXPECT_EQ(c.grid->x[0].count, 201u);
  EXPECT_TRUE(c.solver.auto_dt);
  EXPECT_EQ(c.seed, 20240611u);
  ASSERT_TRUE(c.equilibrium.has_value());
  EXPECT_EQ(c.equilibrium->points.size(), 3u);
  EXPECT_EQ(c.equilibrium->deviations.size(), 4u);
  EXPECT_EQ(c.equilibrium->sim.n_paths, 200000u);
  ASSERT_TRUE(c.start.has_value());
  EXPECT_EQ(c.output, "regulator_out");
}

TEST(Config, UnknownKeyReportsPointer) {
  json j = regulator_preset();
  j["solver"]["max_iters"] = 3;
  EXPECT_EQ(where_of(j), "/solver/max_iters");
  j = regulator_preset();
  j["problem"]["dynamics"]["params"]["mu"] = 1;
  EXPECT_EQ(where_of(j), "/problem/dynamics/params/mu");
}

TEST(Config, TypeAndRangeErrorsReportPointer) {
  json j = regulator_preset();
  j["grid"]["t"]["nodes"] = "many";
  EXPECT_EQ(where_of(j).rfind("/grid/t", 0), 0u);
  j = regulator_preset();
  j["problem"]["dynamics"]["name"] = "heston";
  EXPECT_EQ(where_of(j), "/problem/dynamics/name");
}

TEST(Config, HashIsStableAndSensitive) {
  const json a = regulator_preset();
  json b = regulator_preset();
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b["seed"] = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, HashIgnoresKeyOrder) {
  const json a = json::parse(R"({"x": 1, "y": [1, 2]})");
  const json b = json::parse(R"({"y": [1, 2], "x": 1})");
  EXPECT_EQ(config_hash(a), config_hash(b));
}

TEST(Control, ConstantOutsideSetIsRejected) {
  const RunConfig c = parse_config(regulator_preset());
  ControlSpec s;
  s.constant = Vec{1.5};
  EXPECT_THROW(make_control(s, c.problem), DomainError);
  s.constant = Vec{0.5, 0.5};
  EXPECT_THROW(make_control(s, c.problem), DomainError);
  s.constant = Vec{-0.5};
  EXPECT_EQ(make_control(s, c.problem)(0.0, Vec{0.0})[0], -0.5);
  EXPECT_EQ(make_control(ControlSpec{}, c.problem)(0.3, Vec{1.0})[0], 0.0);
}

TEST(Control, TableFromCsv) {
  const std::string path = temp_file("tic_table.csv", "t,x1,u1\n0,-1,0.5\n0,0,0.5\n0,1,0.5\n0.5,-1,-1\n0.5,0,-1\n0.5,1,-1\n1,-1,0\n1,0,0\n1,1,0\n");
  ControlSpec s;
  s.table = path;
  const FeedbackControl u = make_control(s, parse_config(regulator_preset()).problem);
  EXPECT_EQ(u(0.2, Vec{0.1})[0], 0.5);
  EXPECT_EQ(u(0.6, Vec{0.1})[0], -1.0);
  std::remove(path.c_str());
}

TEST(Config, LoadReportsMalformedJson) {
  const std::string path = temp_file("tic_bad.json", "{\"problem\": ");
  try {
    load_config(path);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_EQ(e.where(), path);
  }
  std::remove(path.c_str());
  EXPECT_THROW(load_config("/nonexistent/tic.json"), InputError);
}

TEST(Config, LoadRoundTripsPreset) {
  const std::string path = temp_file("tic_preset.json", regulator_preset().dump(2));
  const RunConfig c = load_config(path);
  EXPECT_EQ(config_hash(c.raw), config_hash(regulator_preset()));
  std::remove(path.c_str());
}
