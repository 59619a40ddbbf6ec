/*
 Copyright 2026 The tightening Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

// Drives the tighten binary end to end. One process, so the surge bundle is
// certified once and shared.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "tightening/geometry.hpp"
#include "tightening/scenario.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kScenarios = TIGHTENING_SCENARIO_DIR;
const fs::path kWork = TIGHTENING_CLI_WORK;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome tighten(const std::string& args) {
  static int counter = 0;
  const fs::path o = kWork / ("stdout_" + std::to_string(counter) + ".txt");
  const fs::path e = kWork / ("stderr_" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string("\"") + TIGHTEN_BIN + "\" " + args + " >\"" + o.string() + "\" 2>\"" + e.string() + "\"";
  const int status = std::system(cmd.c_str());
  Outcome r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string scenario(const std::string& name) { return (kScenarios / (name + ".json")).string(); }

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = kWork / (name + ".json");
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

std::string surge_text() { return slurp(scenario("motor_surge")); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    const Outcome c = tighten("certify --config " + scenario("motor_surge") + " --out " + (kWork / "surge").string());
    ASSERT_EQ(c.code, 0) << c.err;
  }
  static std::string surge_bundle() { return (kWork / "surge" / "bundle.json").string(); }
};

TEST_F(Cli, CertifySurgeRecordsDeclaredAlpha) {
  const json b = json::parse(slurp(surge_bundle()));
  EXPECT_EQ(b["constants"]["alpha"]["value"], 0.25);
  EXPECT_EQ(b["constants"]["alpha"]["provenance"], "declared");
  EXPECT_EQ(b["seed"], 7);
  EXPECT_EQ(b["partial"], false);
  EXPECT_TRUE(b["constants"]["kf"].contains("samples"));
  // inf travels as a string: k_u is undefined at the incident s = 1.
  bool has_inf = false;
  for (const auto& v : b["constants"]["ku"]["values"]) has_inf = has_inf || v == "inf";
  EXPECT_TRUE(has_inf);
}

TEST_F(Cli, RepairThenEvaluateReproducesReportBitwise) {
  const fs::path out = kWork / "surge_repair";
  const Outcome r = tighten("repair --config " + scenario("motor_surge") + " --bundle " + surge_bundle() + " --out " +
                        out.string() + " --svg");
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"x_eps.csv", "u_eps.csv", "report.json", "overlay.svg"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  const json rep = json::parse(slurp(out / "report.json"));
  const json& th = rep["closeness"];
  EXPECT_GT(th["margin"].get<double>(), 0.0);
  EXPECT_LE(th["linf_gap"].get<double>(), 0.1);
  EXPECT_LE(th["cost_gap"].get<double>(), 0.1);

  const double eps = rep["constants"]["eps"].get<double>();
  const Outcome e = tighten("evaluate --config " + scenario("motor_surge") + " --traj " + (out / "x_eps.csv").string() +
                        " --control " + (out / "u_eps.csv").string() + " --eps " + tightening::format_double(eps) +
                        " --out " + (kWork / "surge_eval").string());
  ASSERT_EQ(e.code, 0) << e.err;
  const json m = json::parse(slurp(kWork / "surge_eval" / "metrics.json"));
  EXPECT_EQ(m["eps"].get<double>(), eps);
  for (const char* k : {"margin", "linf_gap", "cost_reference", "cost_repaired", "cost_gap"}) {
    EXPECT_EQ(m[k].get<double>(), th[k].get<double>()) << k;
  }
}

TEST_F(Cli, RepairIsDeterministic) {
  for (const char* d : {"det_a", "det_b"}) {
    const Outcome r = tighten("repair --config " + scenario("motor_surge") + " --bundle " + surge_bundle() + " --out " +
                          (kWork / d).string());
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"x_eps.csv", "u_eps.csv", "report.json"}) {
    EXPECT_EQ(slurp(kWork / "det_a" / f), slurp(kWork / "det_b" / f)) << f;
  }
}

TEST_F(Cli, UnattainableLambdaExitsOne) {
  // Lambda is not part of the bundle identity, so the surge bundle applies.
  const fs::path out = kWork / "tight";
  const Outcome r = tighten("repair --config " + scenario("motor_surge_tight") + " --bundle " + surge_bundle() +
                        " --out " + out.string());
  EXPECT_EQ(r.code, 1) << r.err;
  EXPECT_NE(r.err.find("eps-infeasible"), std::string::npos) << r.err;
  const json rep = json::parse(slurp(out / "report.json"));
  EXPECT_EQ(rep["ok"], false);
  EXPECT_EQ(rep["failure"]["stage"], "eps-search");
}

TEST_F(Cli, BundleFromAnotherConfigExits65) {
  const Outcome r = tighten("repair --config " + scenario("motor_decline") + " --bundle " + surge_bundle() + " --out " +
                        (kWork / "mismatch").string());
  EXPECT_EQ(r.code, 65) << r.err;
  EXPECT_FALSE(fs::exists(kWork / "mismatch" / "x_eps.csv"));
}

TEST_F(Cli, InteriorReferenceIsReturnedByteIdentical) {
  const fs::path out = kWork / "interior";
  ASSERT_EQ(tighten("certify --config " + scenario("interior_reference") + " --out " + out.string()).code, 0);
  const Outcome r = tighten("repair --config " + scenario("interior_reference") + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(out / "x_eps.csv"), slurp(out / "xbar.csv"));
  EXPECT_EQ(slurp(out / "u_eps.csv"), slurp(out / "ubar.csv"));
}

TEST_F(Cli, EvaluateReferenceAgainstItself) {
  const auto s = tightening::load_scenario(scenario("interior_reference"));
  const auto ctx = tightening::build_context(s);
  const fs::path x = kWork / "ref_x.csv", u = kWork / "ref_u.csv";
  tightening::write_csv_file(x.string(), ctx.xbar);
  tightening::write_csv_file(u.string(), ctx.ubar);
  const Outcome e = tighten("evaluate --config " + scenario("interior_reference") + " --traj " + x.string() +
                        " --control " + u.string());
  ASSERT_EQ(e.code, 0) << e.err;
  const json m = json::parse(e.out);
  EXPECT_EQ(m["linf_gap"].get<double>(), 0.0);
  EXPECT_EQ(m["cost_gap"].get<double>(), 0.0);
  EXPECT_EQ(m["margin"].get<double>(), tightening::interiority_margin(ctx.field, 0.0, ctx.xbar));
}

TEST_F(Cli, EvaluateInfeasibleTrajectoryExitsOne) {
  const fs::path x = kWork / "bad_x.csv", u = kWork / "bad_u.csv";
  std::ofstream(x) << "t,x1\n0,1.5\n1,0.5\n2,1.5\n";
  std::ofstream(u) << "t,u1\n0,0\n1,0\n2,0\n";
  const Outcome e = tighten("evaluate --config " + scenario("motor_surge") + " --traj " + x.string() + " --control " +
                        u.string());
  EXPECT_EQ(e.code, 1) << e.err;
  EXPECT_LT(json::parse(e.out)["margin"].get<double>(), 0.0);
}

TEST_F(Cli, EvaluateDimensionMismatchExits64) {
  const fs::path x = kWork / "dim_x.csv", u = kWork / "dim_u.csv";
  std::ofstream(x) << "t,x1\n0,1.5\n1,1.5\n";
  std::ofstream(u) << "t,u1\n0,0\n1,0\n";
  const Outcome e = tighten("evaluate --config " + scenario("double_integrator") + " --traj " + x.string() +
                        " --control " + u.string());
  EXPECT_EQ(e.code, 64);
  EXPECT_NE(e.err.find("state columns"), std::string::npos) << e.err;
}

TEST_F(Cli, SuperlinearModelFailsWithGrowthWitness) {
  const Outcome r = tighten("certify --config " + scenario("superlinear") + " --out " + (kWork / "superlinear").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("sublinear growth"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("witness:"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(kWork / "superlinear" / "bundle.json"));
  EXPECT_TRUE(fs::exists(kWork / "superlinear" / "certify_failure.json"));
}

TEST_F(Cli, OrderTwoConstraintFailsInwardPointing) {
  const Outcome r = tighten("certify --config " + scenario("double_integrator") + " --out " +
                        (kWork / "double_integrator").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("inward pointing"), std::string::npos) << r.err;
}

TEST_F(Cli, DeclaredConstantsAreSpotValidated) {
  const fs::path out = kWork / "declared";
  const Outcome r = tighten("certify --config " + scenario("declared_constants") + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const json b = json::parse(slurp(out / "bundle.json"));
  for (const char* k : {"theta", "kf", "gamma"}) EXPECT_EQ(b["constants"][k]["provenance"], "declared") << k;

  // A declared Lipschitz constant below the true one is caught by sampling.
  std::string text = slurp(scenario("declared_constants"));
  text.replace(text.find("\"kf\": 0.1"), 9, "\"kf\": 0.05");
  const Outcome low = tighten("certify --config " + write_config("declared_low", text).string() + " --out " +
                          (kWork / "declared_low").string());
  EXPECT_EQ(low.code, 1);
  EXPECT_NE(low.err.find("declared modulus violated"), std::string::npos) << low.err;
}

TEST_F(Cli, SeedFlagOverridesConfigSeed) {
  const fs::path out = kWork / "seeded";
  ASSERT_EQ(tighten("certify --config " + scenario("declared_constants") + " --seed 11 --out " + out.string()).code, 0);
  EXPECT_EQ(json::parse(slurp(out / "bundle.json"))["seed"], 11);
}

// Every malformed field is named, with its position in the file.
struct Malformed {
  const char* label;
  const char* from;
  const char* to;
  const char* named;
};

TEST_F(Cli, MalformedConfigsNameTheField) {
  const Malformed cases[] = {
      {"negative_T", "\"T\": 2.0", "\"T\": -2.0", "field 'T' must be positive at line 7"},
      {"misspelled", "\"lambda\"", "\"lamda\"", "field 'lamda' is not a recognized field at line 8"},
      {"bad_drift", "0.2*cos(x1)", "0.2*cos(x1", "field 'model.drift' does not parse"},
      {"bad_kind", "\"kind\": \"boundary_tracking\"", "\"kind\": \"ramp\"", "field 'reference.kind' must be"},
      {"x0_dim", "\"x0\": [1.5]", "\"x0\": [1.5, 0.0]", "field 'x0' has 2 entries"},
      {"box", "\"box_radius\": 4.0", "\"box_radius\": \"4\"", "field 'constraint.box_radius' must be a number"},
      {"weight", "[[1.0]]", "[[1.0, 0.0]]", "field 'weight.matrix' must be square"},
      {"json", "\"T\": 2.0,", "\"T\": 2.0,,", "config is not valid JSON at line 7"},
  };
  for (const auto& c : cases) {
    std::string text = surge_text();
    const auto at = text.find(c.from);
    ASSERT_NE(at, std::string::npos) << c.label;
    text.replace(at, std::string(c.from).size(), c.to);
    const Outcome r = tighten("certify --config " + write_config(c.label, text).string() + " --out " +
                          (kWork / c.label).string());
    EXPECT_EQ(r.code, 64) << c.label;
    EXPECT_NE(r.err.find(c.named), std::string::npos) << c.label << ": " << r.err;
  }
}

TEST_F(Cli, UsageErrorsExit64) {
  EXPECT_EQ(tighten("").code, 64);
  EXPECT_EQ(tighten("certify").code, 64);
  EXPECT_EQ(tighten("frobnicate --config x").code, 64);
  EXPECT_EQ(tighten("evaluate --config " + scenario("motor_surge")).code, 64);
  EXPECT_EQ(tighten("certify --config /nonexistent/config.json").code, 64);
}

}  // namespace
