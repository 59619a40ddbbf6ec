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

#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tightening/errors.hpp"
#include "tightening/hypotheses.hpp"
#include "tightening/repair.hpp"
#include "tightening/signals.hpp"

namespace tightening {

// JSON numbers cannot hold inf or nan; those travel as the strings "inf", "-inf", "nan".

inline nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline nlohmann::json json_numbers(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(json_number(x));
  return a;
}

namespace detail {

[[noreturn]] inline void bundle_field_error(const std::string& key, const std::string& why) {
  throw Error(ErrorKind::parse, "bundle field '" + key + "' " + why);
}

inline double read_number(const nlohmann::json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  bundle_field_error(key, "must be a number");
}

inline const nlohmann::json& member(const nlohmann::json& obj, const std::string& key) {
  if (!obj.is_object() || !obj.contains(key)) bundle_field_error(key, "is missing");
  return obj.at(key);
}

inline std::vector<double> read_numbers(const nlohmann::json& v, const std::string& key) {
  if (!v.is_array()) bundle_field_error(key, "must be an array");
  std::vector<double> out;
  for (const auto& e : v) out.push_back(read_number(e, key));
  return out;
}

inline Provenance read_provenance(const std::string& s, const std::string& key) {
  if (s == "declared") return Provenance::declared;
  if (s == "certified") return Provenance::certified;
  if (s == "declared-only") return Provenance::declared_only;
  bundle_field_error(key, "has an unknown provenance '" + s + "'");
}

inline nlohmann::json table_json(const ModulusTable& t) {
  return {{"deltas", json_numbers(t.deltas())}, {"values", json_numbers(t.values())}, {"grid_step", t.grid_step()}};
}

inline ModulusTable read_table(const nlohmann::json& v, const std::string& key) {
  try {
    return ModulusTable(read_numbers(member(v, "deltas"), key + ".deltas"), read_numbers(member(v, "values"), key + ".values"),
                        read_number(member(v, "grid_step"), key + ".grid_step"));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::parse) throw;
    bundle_field_error(key, std::string("is not a valid modulus table: ") + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Bundle file: one record per constant with value or table, provenance,
// sample count and worst witness.

inline nlohmann::json bundle_to_json(const HypothesisBundle& b, const std::string& config_hash) {
  using nlohmann::json;
  auto prov = [&](const std::string& k) {
    auto it = b.provenance.find(k);
    return it == b.provenance.end() ? std::string("certified") : std::string(to_string(it->second));
  };
  auto record = [&](const std::string& k, json value, const std::string& sample_key) {
    json r{{"provenance", prov(k)}};
    const char* slot = value.is_array() ? "values" : "value";
    r[slot] = std::move(value);
    auto s = b.sample_counts.find(sample_key);
    if (s != b.sample_counts.end()) r["samples"] = s->second;
    for (const auto& wk : {k, sample_key, k + ".stability"}) {
      auto w = b.witnesses.find(wk);
      if (w != b.witnesses.end() && !w->second.empty()) r[wk == k + ".stability" ? "stability" : "witness"] = w->second;
    }
    return r;
  };
  json c;
  c["theta"] = record("theta", json_numbers(b.theta), "theta");
  c["kf"] = record("kf", json_numbers(b.kf), "kf");
  c["gamma"] = record("gamma", json_numbers(b.gamma), "regularity");
  c["beta_u"] = record("beta_u", json_numbers(b.beta_u), "regularity");
  c["ku"] = record("ku", json_numbers(b.ku), "regularity");
  c["alpha"] = b.alpha ? record("alpha", json_number(*b.alpha), "regularity") : json(nullptr);
  for (const auto& [k, v] : std::vector<std::pair<std::string, double>>{
           {"M_u", b.M_u}, {"M_v", b.M_v}, {"xi", b.xi}, {"eta", b.eta}}) {
    c[k] = record(k, json_number(v), "inward");
  }
  c["eps0"] = record("eps0", json_number(b.eps0), "eps0");
  c["delta0"] = json{{"value", json_number(b.delta0)}, {"provenance", "declared"}};
  c["omega_A"] = json{{"table", detail::table_json(b.omega_A)}, {"provenance", prov("omega_A")}};
  json l2e = json::array();
  for (const auto& [l, e] : b.lambda_to_eps) l2e.push_back({json_number(l), json_number(e)});

  json j;
  j["format"] = "tightening-bundle/1";
  j["config_hash"] = config_hash;
  j["seed"] = b.seed;
  j["xbar_linf"] = json_number(b.xbar_linf);
  j["box_radius"] = json_number(b.box_radius);
  j["grid"] = json_numbers(b.grid.nodes());
  j["grid_step"] = b.grid.step();
  j["eps_list"] = json_numbers(b.eps_list);
  j["lambda_to_eps"] = l2e;
  j["partial"] = b.partial();
  j["constants"] = c;
  return j;
}

struct BundleFile {
  HypothesisBundle bundle;
  std::string config_hash;
};

inline BundleFile bundle_from_json(const nlohmann::json& j) {
  using detail::member;
  using detail::read_number;
  using detail::read_numbers;
  if (!j.is_object() || !j.contains("format") || j.at("format") != "tightening-bundle/1") {
    detail::bundle_field_error("format", "must be \"tightening-bundle/1\"");
  }
  BundleFile f;
  HypothesisBundle& b = f.bundle;
  f.config_hash = member(j, "config_hash").get<std::string>();
  b.seed = member(j, "seed").get<std::uint64_t>();
  b.xbar_linf = read_number(member(j, "xbar_linf"), "xbar_linf");
  b.box_radius = read_number(member(j, "box_radius"), "box_radius");
  b.grid = TimeGrid(read_numbers(member(j, "grid"), "grid"), read_number(member(j, "grid_step"), "grid_step"));
  b.eps_list = read_numbers(member(j, "eps_list"), "eps_list");
  for (const auto& e : member(j, "lambda_to_eps")) {
    if (!e.is_array() || e.size() != 2) detail::bundle_field_error("lambda_to_eps", "entries must be pairs");
    b.lambda_to_eps.emplace_back(read_number(e[0], "lambda_to_eps"), read_number(e[1], "lambda_to_eps"));
  }
  const auto& c = member(j, "constants");
  auto values = [&](const char* k) {
    const auto& r = member(c, k);
    b.provenance[k] = detail::read_provenance(member(r, "provenance").get<std::string>(), k);
    return read_numbers(member(r, "values"), k);
  };
  auto scalar = [&](const char* k) {
    const auto& r = member(c, k);
    b.provenance[k] = detail::read_provenance(member(r, "provenance").get<std::string>(), k);
    return read_number(member(r, "value"), k);
  };
  b.theta = values("theta");
  b.kf = values("kf");
  b.gamma = values("gamma");
  b.beta_u = values("beta_u");
  b.ku = values("ku");
  if (!member(c, "alpha").is_null()) b.alpha = scalar("alpha");
  b.M_u = scalar("M_u");
  b.M_v = scalar("M_v");
  b.xi = scalar("xi");
  b.eta = scalar("eta");
  b.eps0 = scalar("eps0");
  b.delta0 = read_number(member(member(c, "delta0"), "value"), "delta0");
  const auto& oa = member(c, "omega_A");
  b.omega_A = detail::read_table(member(oa, "table"), "omega_A");
  b.provenance["omega_A"] = detail::read_provenance(member(oa, "provenance").get<std::string>(), "omega_A");
  return f;
}

inline BundleFile read_bundle_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::parse, "cannot open bundle " + path);
  try {
    return bundle_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, "bundle " + path + " is malformed", e.what());
  }
}

// ---------------------------------------------------------------------------
// Repair report.

inline nlohmann::json constants_to_json(const RepairConstants& c) {
  return {{"Delta", json_number(c.Delta)},
          {"k", json_number(c.k)},
          {"rho_hat", json_number(c.rho_hat)},
          {"eps", json_number(c.eps)},
          {"N0", c.N0},
          {"M_Delta", json_number(c.M_Delta)},
          {"C_vDelta", json_number(c.C_vDelta)},
          {"R", json_number(c.R)},
          {"omega_f_Delta", json_number(c.omega_f_Delta)},
          {"omega_f_T", json_number(c.omega_f_T)},
          {"omega_gamma_Delta", json_number(c.omega_gamma(c.Delta))},
          {"omega_bar_Delta", json_number(c.omega_bar(c.Delta))},
          {"omega_bar_step", json_number(c.omega_bar(c.step))},
          {"rho_bar_eps", json_number(c.rho_bar_eps)},
          {"theta_l1", json_number(c.theta_l1)},
          {"theta_l2", json_number(c.theta_l2)},
          {"ubar_l2", json_number(c.ubar_l2)},
          {"betau_l2", json_number(c.betau_l2)},
          {"xbar_linf", json_number(c.xbar_linf)},
          {"mu_bar", json_number(c.mu_bar)},
          {"partition_first", c.partition.empty() ? 0.0 : c.partition.front()},
          {"partition_last", c.partition.empty() ? 0.0 : c.partition.back()}};
}

inline nlohmann::json vec_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(json_number(v[i]));
  return a;
}

inline nlohmann::json report_to_json(const RepairResult& r, double lambda, const std::string& config_hash) {
  using nlohmann::json;
  const RepairReport& rep = r.report;
  json j;
  j["format"] = "tightening-report/1";
  j["config_hash"] = config_hash;
  j["lambda"] = lambda;
  j["ok"] = r.ok;
  if (r.failure) {
    j["failure"] = {{"stage", r.failure_stage},
                    {"kind", std::string(to_string(r.failure->kind()))},
                    {"message", r.failure->what()},
                    {"witness", r.failure->witness()}};
  }
  j["constants"] = constants_to_json(r.constants);
  j["mode"] = rep.mode;
  j["eps_tried"] = json_numbers(rep.eps_tried);
  j["eps_rejections"] = rep.eps_rejections;
  j["eps_condition_violated"] = rep.eps_condition_violated;
  j["closeness"] = {{"margin", json_number(rep.margin)},
                  {"margin_ok", rep.margin_ok},
                  {"linf_gap", json_number(rep.linf_gap)},
                  {"linf_ok", rep.linf_ok},
                  {"cost_reference", json_number(rep.cost_reference)},
                  {"cost_repaired", json_number(rep.cost_repaired)},
                  {"cost_gap", json_number(rep.cost_gap)},
                  {"cost_ok", rep.cost_ok},
                  {"l2_theoretical_bound", json_number(rep.l2_theoretical_bound)}};
  j["invariants"] = {{"rho_hat_exceedances", rep.rho_hat_exceedances},
                     {"recursion_rho_violations", rep.recursion_rho_violations},
                     {"recursion_d_holds", rep.recursion_d_holds},
                     {"envelope_violations", rep.envelope_violations},
                     {"oscillation_violations", rep.oscillation_violations},
                     {"cone_violations", rep.cone_violations},
                     {"cone_max_excess", json_number(rep.cone_max_excess)},
                     {"delayed_gap_violations", rep.delayed_gap_violations},
                     {"delayed_gap_max_excess", json_number(rep.delayed_gap_max_excess)},
                     {"case_tolerance", json_number(rep.case_tolerance)},
                     {"reference_consistency", json_number(rep.reference_consistency)}};
  j["rho"] = json_numbers(rep.rho);
  j["d"] = json_numbers(rep.d);
  j["d_tilde_last"] = rep.d_tilde.empty() ? json(0.0) : json_number(rep.d_tilde.back());
  // Per-iteration columns; full records for the intervals that changed the iterate.
  json cases = json::array();
  json margins = json::array();
  json bursts = json::array();
  for (const auto& it : rep.iterations) {
    cases.push_back(to_string(it.which));
    margins.push_back(json_number(it.interval_margin));
    if (it.which != IntervalCase::burst) continue;
    bursts.push_back({{"i", it.i},
                      {"t_i", it.t_i},
                      {"t_next", it.t_next},
                      {"rho", json_number(it.rho)},
                      {"d_boundary", json_number(it.d_boundary)},
                      {"tau", it.tau},
                      {"u0", vec_json(it.u0)},
                      {"v0", vec_json(it.v0)},
                      {"inward_margin", json_number(it.inward_margin)},
                      {"step_gap", json_number(it.step_gap)},
                      {"g_bound", json_number(it.g_bound)},
                      {"d_next", json_number(it.d_next)},
                      {"interval_margin", json_number(it.interval_margin)},
                      {"cone_excess", json_number(it.cone_excess)},
                      {"delayed_gap_excess", json_number(it.delayed_gap_excess)},
                      {"max_state_norm", json_number(it.max_state_norm)},
                      {"oscillation_excess", json_number(it.oscillation_excess)},
                      {"v0_exceeds_M_v", it.v0_exceeds_M_v}});
  }
  j["iterations"] = {{"count", rep.iterations.size()}, {"case", cases}, {"interval_margin", margins}};
  j["bursts"] = bursts;
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::validation, "cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace tightening
