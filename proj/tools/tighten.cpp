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

// tighten: certify / repair / evaluate front end.
//
// Exit codes: 0 success, 1 contract failure, 2 partial certification,
// 64 usage or parse error, 65 bundle does not match the config.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tightening.hpp"

namespace {

using namespace tightening;

constexpr int kOk = 0;
constexpr int kContract = 1;
constexpr int kPartial = 2;
constexpr int kUsage = 64;
constexpr int kMismatch = 65;

struct Args {
  std::string config;
  std::string bundle;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool svg = false;
  std::string traj;
  std::string control;
  double eps = 0.0;
};

std::string out_dir(const Args& a, const Scenario& s) {
  const std::string dir = a.out.empty() ? s.out : a.out;
  std::filesystem::create_directories(dir);
  return dir;
}

std::string bundle_path(const Args& a, const std::string& dir) {
  return a.bundle.empty() ? (std::filesystem::path(dir) / "bundle.json").string() : a.bundle;
}

void print_error(const std::string& command, const Error& e) {
  std::cerr << "tighten " << command << ": " << e.what() << '\n';
  if (!e.witness().empty()) std::cerr << "  witness: " << e.witness() << '\n';
}

int cmd_certify(const Args& a) {
  const Scenario s = load_scenario(a.config);
  const ScenarioContext ctx = build_context(s);
  BundleOptions opt = bundle_options_for(s);
  if (a.seed) opt.seed = *a.seed;
  const std::string dir = out_dir(a, s);
  HypothesisBundle b;
  try {
    b = certify_bundle(ctx.model, ctx.field, ctx.xbar, ctx.ubar, ctx.grid, opt);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::parse) throw;
    print_error("certify", e);
    write_json_file((std::filesystem::path(dir) / "certify_failure.json").string(),
                    {{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}, {"witness", e.witness()}});
    return kContract;
  }
  const std::string path = bundle_path(a, dir);
  write_json_file(path, bundle_to_json(b, scenario_hash(s)));
  std::cout << "bundle " << path << '\n'
            << "  M_u=" << format_double(b.M_u) << " xi=" << format_double(b.xi) << " M_v=" << format_double(b.M_v)
            << " eta=" << format_double(b.eta) << '\n';
  if (b.alpha) std::cout << "  alpha=" << format_double(*b.alpha) << '\n';
  for (const auto& [name, p] : b.provenance) std::cout << "  " << name << ": " << to_string(p) << '\n';
  if (b.partial()) {
    std::cout << "partial certification: some constants are declared-only\n";
    return kPartial;
  }
  return kOk;
}

int cmd_repair(const Args& a) {
  const Scenario s = load_scenario(a.config);
  const std::string dir = out_dir(a, s);
  const BundleFile bf = read_bundle_file(bundle_path(a, dir));
  const std::string hash = scenario_hash(s);
  if (bf.config_hash != hash) {
    std::cerr << "tighten repair: bundle was certified for config " << bf.config_hash << ", this config is " << hash
              << '\n';
    return kMismatch;
  }
  const ScenarioContext ctx = build_context(s);
  if (ctx.xbar.sup_norm() > bf.bundle.xbar_linf) {
    std::cerr << "tighten repair: |xbar|_inf grew past the bundle's " << format_double(bf.bundle.xbar_linf) << '\n';
    return kMismatch;
  }
  const RepairResult r =
      repair(ctx.xbar, ctx.ubar, s.lambda, bf.bundle, ctx.field, ctx.model, ctx.weight, repair_options_for(s));
  const std::filesystem::path d(dir);
  write_json_file((d / "report.json").string(), report_to_json(r, s.lambda, hash));
  if (!r.ok) {
    std::cerr << "tighten repair: failed at " << r.failure_stage << '\n';
    if (r.failure) print_error("repair", *r.failure);
    return kContract;
  }
  write_csv_file((d / "x_eps.csv").string(), r.x);
  write_csv_file((d / "u_eps.csv").string(), r.u);
  write_csv_file((d / "xbar.csv").string(), ctx.xbar);
  write_csv_file((d / "ubar.csv").string(), ctx.ubar);
  if (a.svg) write_overlay_svg((d / "overlay.svg").string(), ctx.xbar, r.x, ctx.field, r.constants.eps);
  const RepairReport& rep = r.report;
  std::cout << "eps=" << format_double(r.constants.eps) << " mode=" << rep.mode << '\n'
            << "  margin=" << format_double(rep.margin) << " linf_gap=" << format_double(rep.linf_gap)
            << " cost_gap=" << format_double(rep.cost_gap) << '\n';
  if (!rep.passed()) {
    std::cerr << "tighten repair: a closeness or interiority check failed\n";
    return kContract;
  }
  return kOk;
}

int cmd_evaluate(const Args& a) {
  const Scenario s = load_scenario(a.config);
  const ScenarioContext ctx = build_context(s);
  const Trajectory x = read_trajectory_csv_file(a.traj);
  const ControlSignal u = read_control_csv_file(a.control);
  if (x.dim() != ctx.model.state_dim) {
    std::cerr << "tighten evaluate: " << a.traj << " has " << x.dim() << " state columns, the model has "
              << ctx.model.state_dim << '\n';
    return kUsage;
  }
  if (u.dim() != ctx.model.control_dim) {
    std::cerr << "tighten evaluate: " << a.control << " has " << u.dim() << " control columns, the model has "
              << ctx.model.control_dim << '\n';
    return kUsage;
  }
  const ClosenessMetrics m = closeness_metrics(ctx.field, a.eps, x, u, ctx.xbar, ctx.ubar, ctx.weight);
  const nlohmann::json j{{"eps", a.eps},
                         {"margin", json_number(m.margin)},
                         {"linf_gap", json_number(m.linf_gap)},
                         {"cost_reference", json_number(m.cost_reference)},
                         {"cost_repaired", json_number(m.cost_repaired)},
                         {"cost_gap", json_number(m.cost_gap)}};
  std::cout << j.dump(2) << '\n';
  if (!a.out.empty()) {
    std::filesystem::create_directories(a.out);
    write_json_file((std::filesystem::path(a.out) / "metrics.json").string(), j);
  }
  return m.margin > 0.0 ? kOk : kContract;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constraint tightening: certify hypotheses, repair a reference trajectory, evaluate results"};
  app.require_subcommand(1);
  Args a;
  std::uint64_t seed = 0;

  auto* certify = app.add_subcommand("certify", "certify the hypothesis constants and write a bundle");
  auto* repair_cmd = app.add_subcommand("repair", "build the tightened trajectory from a config and a bundle");
  auto* evaluate = app.add_subcommand("evaluate", "recompute interiority and closeness metrics from CSV files");
  for (auto* sub : {certify, repair_cmd, evaluate}) {
    sub->add_option("--config", a.config, "scenario config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", a.out, "output directory (default: the config's out)");
  }
  for (auto* sub : {certify, repair_cmd}) {
    sub->add_option("--bundle", a.bundle, "bundle file (default: <out>/bundle.json)");
  }
  certify->add_option("--seed", seed, "sampling seed (default: the config's seed)");
  repair_cmd->add_flag("--svg", a.svg, "also write overlay.svg");
  evaluate->add_option("--traj", a.traj, "state CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--control", a.control, "control CSV")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--eps", a.eps, "tightening used for the margin")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  if (certify->count("--seed") > 0) a.seed = seed;

  try {
    if (certify->parsed()) return cmd_certify(a);
    if (repair_cmd->parsed()) return cmd_repair(a);
    return cmd_evaluate(a);
  } catch (const Error& e) {
    std::cerr << "tighten: " << e.what() << '\n';
    if (!e.witness().empty()) std::cerr << "  witness: " << e.witness() << '\n';
    return e.kind() == ErrorKind::parse || e.kind() == ErrorKind::shape ? kUsage : kContract;
  } catch (const std::exception& e) {
    std::cerr << "tighten: " << e.what() << '\n';
    return kContract;
  }
}
