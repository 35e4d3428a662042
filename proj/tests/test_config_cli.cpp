#include "hbubble/commands.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace hbubble;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "hbubble_cli_test" / name;
  fs::remove_all(dir);
  return dir;
}

int error_line(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return -1;
}

const std::string kMinimal = "degree = 8\nfield:\n1 gaussian a=1 c=0,0,0 s=1\nend\n";

Log quiet() { return Log{nullptr, false}; }

bool no_temp_files(const fs::path& dir) {
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.path().extension() == ".tmp") return false;
  return true;
}

}  // namespace

TEST(Config, RoundTripIsStable) {
  for (const auto& name : {"thm1", "thm2", "thm3", "remark2", "remark3"}) {
    const RunConfig c = scenario_config(name);
    const std::string text = serialize_config(c);
    const RunConfig back = parse_config(text);
    EXPECT_EQ(back, c) << name;
    EXPECT_EQ(serialize_config(back), text) << name;
  }
  RunConfig c = parse_config(kMinimal);
  c.eps = 0.1 + 0.2;  // not exactly representable in short decimal
  c.mode = SolveMode::newton;
  c.mesh = MeshOutput::both;
  EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, ShippedFilesMatchScenarios) {
  for (const auto& name : {"thm1", "thm2", "thm3", "remark2", "remark3"}) {
    const RunConfig c = load_config(fs::path(HB_SOURCE_DIR) / "configs" / (std::string(name) + ".cfg"));
    EXPECT_EQ(c, scenario_config(name)) << name;
  }
  const RunConfig d = load_config(fs::path(HB_SOURCE_DIR) / "configs" / "default.cfg");
  EXPECT_EQ(d.scenario, "custom");
  EXPECT_EQ(d.field, scenario_config("thm1").field);
}

TEST(Config, CommentsCaseAndDefaults) {
  const RunConfig c = parse_config(
      "# header\n\nDegree = 12   # trailing\nMODE = Newton\nbox = -1,-2,-3 1 2 3\n"
      "field:\n  # a comment inside the block\n  -1 GAUSSIAN a=2 c=1,0,0 s=0.5\nend\n");
  EXPECT_EQ(c.degree, 12);
  EXPECT_EQ(c.mode, SolveMode::newton);
  EXPECT_EQ(c.box.lo, Eigen::Vector3d(-1, -2, -3));
  ASSERT_EQ(c.field.size(), 1u);
  EXPECT_EQ(c.field[0].weight, -1.0);
  EXPECT_EQ(c.field[0].a, 2.0);
  EXPECT_EQ(c.eps, RunConfig{}.eps);
}

TEST(Config, ErrorsCarryLineNumbers) {
  EXPECT_EQ(error_line("degree = 8\ncolour = blue\n" + kMinimal.substr(11)), 2);
  EXPECT_EQ(error_line("degree = 8\ndegree = 9\n"), 2);
  EXPECT_EQ(error_line("\n\ndegree = eight\n"), 3);
  EXPECT_EQ(error_line("eps 0.01\n"), 1);
  EXPECT_EQ(error_line("box = 1 2 3\n"), 1);
  EXPECT_EQ(error_line("p = 1 2\n"), 1);
  EXPECT_EQ(error_line("mode = fast\n"), 1);
  // inside the field block the DSL reports its own line
  EXPECT_EQ(error_line("degree = 8\nfield:\n1 gaussian a=1 c=0,0,0 s=1\n1 blob a=1\nend\n"), 4);
  EXPECT_EQ(error_line("field:\n1 gaussian a=1 c=0,0,0 s=1\n"), 1);
  // range checks point at the offending key
  EXPECT_EQ(error_line("eps = 0.5\ndegree = 99\nfield:\n1 constant a=1\nend\n"), 2);
  EXPECT_EQ(error_line("h0 = 0\nfield:\n1 constant a=1\nend\n"), 1);
  EXPECT_EQ(error_line("degree = 8\nbox = 1 0 0 0 1 1\nfield:\n1 constant a=1\nend\n"), 2);
  EXPECT_THROW(parse_config("degree = 8\n"), ConfigError);  // no field
  EXPECT_THROW(parse_config("scenario = thm3\n" + kMinimal), ConfigError);  // no h5 points
  EXPECT_THROW(scenario_config("thm9"), std::invalid_argument);
}

TEST(Config, HashIgnoresOutputAndThreads) {
  RunConfig a = parse_config(kMinimal), b = a;
  b.out = "elsewhere";
  b.threads = 4;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.eps = 2e-2;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Commands, ValidateAtLowDegree) {
  for (int L : {4, 16}) {
    RunConfig c = parse_config(kMinimal);
    c.degree = L;
    c.out = scratch("validate" + std::to_string(L)).string();
    const CommandResult r = cmd_validate(c, quiet());
    EXPECT_TRUE(r.ok) << r.report.dump(2);
    EXPECT_EQ(r.report["items"].size(), 11u);
    EXPECT_TRUE(fs::exists(fs::path(c.out) / "validate.json"));
  }
}

TEST(Commands, GammaScanSingleBumpAndFlatField) {
  RunConfig c = parse_config(kMinimal);
  c.gamma_n = 9;
  c.box = Box{}.scaled(3.0);
  c.out = scratch("gamma").string();
  const CommandResult r = cmd_gamma_scan(c, quiet());
  ASSERT_TRUE(r.ok);
  ASSERT_EQ(r.report["critical"].size(), 1u);
  EXPECT_EQ(r.report["critical"][0]["type"], "max");
  std::ifstream csv(fs::path(c.out) / "landscape.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "px,py,pz,gamma,gx,gy,gz");

  c.field = parse_field_dsl("1 constant a=0");
  c.out = scratch("gamma_flat").string();
  std::ostringstream os;
  const CommandResult f = cmd_gamma_scan(c, Log{&os, false});
  EXPECT_TRUE(f.report["flat"].get<bool>());
  EXPECT_NE(os.str().find("flat"), std::string::npos);
}

TEST(Commands, ReduceZeroEpsAndFailure) {
  RunConfig c = parse_config(kMinimal);
  c.eps = 0.0;
  c.p = Eigen::Vector3d(1, 2, 0);
  c.out = scratch("reduce0").string();
  const CommandResult r = cmd_reduce(c, quiet());
  EXPECT_TRUE(r.ok) << r.report.dump(2);
  EXPECT_EQ(r.report["state"]["eta_w13"].get<double>(), 0.0);
  EXPECT_EQ(r.report["state"]["iterations"].get<int>(), 1);
  EXPECT_TRUE(r.report["expansion"]["bounded"].get<bool>());
  EXPECT_TRUE(fs::exists(fs::path(c.out) / "expansion.csv"));

  c.field = parse_field_dsl("1 radialwell a=1 b=4 s=3");
  c.eps = 0.9;
  c.p = Eigen::Vector3d::Zero();
  c.out = scratch("reduce_fail").string();
  const CommandResult f = cmd_reduce(c, quiet());
  EXPECT_FALSE(f.ok);
  EXPECT_FALSE(f.report["history"].empty());
}

TEST(Commands, ReduceFarFromTheBump) {
  RunConfig c = parse_config(kMinimal);
  c.degree = 12;
  c.p = Eigen::Vector3d(8, 0, 0);
  c.eps_list.clear();
  c.out = scratch("reduce_far").string();
  const CommandResult r = cmd_reduce(c, quiet());
  ASSERT_TRUE(r.ok);
  EXPECT_LE(std::abs(r.report["state"]["phi_deviation"].get<double>()), 1e-4);
}

TEST(Commands, SolveWritesEverythingAndIsReproducible) {
  RunConfig c = parse_config(kMinimal);
  c.scan_n = 5;
  c.box = Box{}.scaled(3.0);
  c.mesh = MeshOutput::both;
  c.out = scratch("solve_a").string();
  CommandResult r = cmd_solve(c, quiet());
  ASSERT_TRUE(r.ok) << r.report.dump(2);
  write_manifest(c, "solve", r, 0.0);
  const fs::path out(c.out);
  std::ifstream jl(out / "critical.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(jl, line)) {
    const json j = json::parse(line);
    for (const char* k : {"eps", "p", "phi", "gamma", "eta_w13", "iterations", "type", "hessian_eigs", "residual_l2"})
      EXPECT_TRUE(j.contains(k)) << k;
    ++n;
  }
  EXPECT_EQ(n, 1);
  for (const char* f : {"bubble_0.obj", "bubble_0.csv", "bubble_0.json", "solve.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_TRUE(no_temp_files(out));
  const json m = json::parse(read_file(out / "manifest.json"));
  EXPECT_EQ(m["config_hash"], config_hash(c));

  c.threads = 2;
  c.out = scratch("solve_b").string();
  ASSERT_TRUE(cmd_solve(c, quiet()).ok);
  EXPECT_EQ(read_file(out / "critical.jsonl"), read_file(fs::path(c.out) / "critical.jsonl"));
}

TEST(Commands, MultiplicityTwoSignAndFailedHypotheses) {
  RunConfig c = scenario_config("thm3");
  c.degree = 8;
  c.scan_n = 7;
  c.mesh = MeshOutput::none;
  c.out = scratch("mult3").string();
  const CommandResult r = cmd_multiplicity(c, quiet());
  EXPECT_TRUE(r.ok) << r.report.dump(2);
  EXPECT_GE(r.report["runs"][0]["counts"]["phi_above"].get<int>(), 1);
  EXPECT_GE(r.report["runs"][0]["counts"]["phi_below"].get<int>(), 1);

  RunConfig bad = scenario_config("thm2");
  bad.degree = 8;
  bad.field = parse_field_dsl("-1 radialwell a=1 b=4 s=3");
  bad.out = scratch("mult_bad").string();
  const CommandResult f = cmd_multiplicity(bad, quiet());
  EXPECT_FALSE(f.ok);
  EXPECT_FALSE(f.report["runs"][0]["hypotheses"]["pass"].get<bool>());
  EXPECT_FALSE(f.report["runs"][0].contains("solve"));

  RunConfig custom = parse_config(kMinimal);
  EXPECT_THROW(cmd_multiplicity(custom, quiet()), std::invalid_argument);
}
