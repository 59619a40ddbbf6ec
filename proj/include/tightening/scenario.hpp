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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tightening/dynamics.hpp"
#include "tightening/errors.hpp"
#include "tightening/geometry.hpp"
#include "tightening/hypotheses.hpp"
#include "tightening/propagation.hpp"
#include "tightening/repair.hpp"
#include "tightening/signals.hpp"

namespace tightening {

using Json = nlohmann::json;

struct ModelSpec {
  std::string kind;  // motor_surge | motor_decline | control_affine
  MotorParams motor;
  std::vector<std::string> drift;
  std::vector<std::vector<std::string>> input;
  // Analytic constants for control_affine models; certification spot-validates them.
  std::optional<double> declared_theta;
  std::optional<double> declared_kf;
  std::optional<double> declared_gamma;
};

struct ConstraintSpec {
  std::string kind;  // unit_ball_complement | half_plane | expression
  double box_radius = 4.0;
  double rate = 0.0;
  std::vector<double> normal;
  double offset = 0.0;
  std::vector<std::string> components;
  double resolution = 0.0;
};

struct ReferenceSpec {
  std::string kind;  // boundary_tracking | constant | samples | csv
  // boundary_tracking: |x| descends linearly to `level`, holds, then climbs.
  double level = 1.0;
  double descend_until = 0.5;
  double hold_until = 1.5;
  double feedback_gain = 20.0;
  double control_bound = 50.0;
  std::vector<double> value;
  std::vector<double> times;
  std::vector<std::vector<double>> controls;
  std::string path;
};

struct WeightSpec {
  std::string kind = "constant";  // constant | linear_ramp
  Mat start;
  Mat end;
};

struct Scenario {
  std::string name;
  ModelSpec model;
  ConstraintSpec constraint;
  ReferenceSpec reference;
  std::vector<double> x0;
  double T = 0.0;
  double lambda = 0.0;
  double step = 0.0;
  WeightSpec weight;
  std::uint64_t seed = 1;
  std::string out = "out";
  double eps0 = 0.25;
  double delta0 = 0.5;
  bool fallback = true;
  double eps_min = 1e-6;
  /// Canonical text of the parts a bundle depends on.
  std::string identity;
};

namespace detail {

/// Reads `obj[key]` naming `path.key` in every diagnostic.
class Fields {
 public:
  Fields(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail("", "must be an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw Error(ErrorKind::parse, "field '" + name(key) + "' " + why);
  }
  std::string name(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }
  bool has(const std::string& key) const { return obj_.contains(key); }
  const Json& raw(const std::string& key) const {
    if (!has(key)) fail(key, "is required");
    return obj_.at(key);
  }
  Fields object(const std::string& key) const { return Fields(raw(key), name(key)); }

  double number(const std::string& key) const {
    const Json& v = raw(key);
    if (!v.is_number()) fail(key, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(key, "must be finite");
    return d;
  }
  double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }
  double positive(const std::string& key) const {
    const double d = number(key);
    if (!(d > 0.0)) fail(key, "must be positive");
    return d;
  }
  double positive(const std::string& key, double fallback) const { return has(key) ? positive(key) : fallback; }
  std::string text(const std::string& key) const {
    const Json& v = raw(key);
    if (!v.is_string()) fail(key, "must be a string");
    return v.get<std::string>();
  }
  std::string text(const std::string& key, const std::string& fallback) const {
    return has(key) ? text(key) : fallback;
  }
  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const Json& v = raw(key);
    if (!v.is_boolean()) fail(key, "must be true or false");
    return v.get<bool>();
  }
  std::uint64_t count(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const Json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      fail(key, "must be a nonnegative integer");
    }
    return v.get<std::uint64_t>();
  }
  std::vector<double> numbers(const std::string& key) const {
    const Json& v = raw(key);
    if (!v.is_array() || v.empty()) fail(key, "must be a nonempty array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number() || !std::isfinite(e.get<double>())) fail(key, "must be a nonempty array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  std::vector<std::string> texts(const std::string& key) const {
    const Json& v = raw(key);
    if (!v.is_array() || v.empty()) fail(key, "must be a nonempty array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(key, "must be a nonempty array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  Mat matrix(const std::string& key) const {
    const Json& v = raw(key);
    if (!v.is_array() || v.empty() || !v.front().is_array() || v.front().empty()) {
      fail(key, "must be a nonempty matrix (array of rows)");
    }
    const auto rows = static_cast<Eigen::Index>(v.size());
    const auto cols = static_cast<Eigen::Index>(v.front().size());
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Json& row = v[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) fail(key, "has ragged rows");
      for (Eigen::Index j = 0; j < cols; ++j) {
        const Json& e = row[static_cast<std::size_t>(j)];
        if (!e.is_number()) fail(key, "must contain only numbers");
        m(i, j) = e.get<double>();
      }
    }
    return m;
  }
  /// Rejects keys outside `allowed`, so misspelled fields never pass silently.
  void only(std::initializer_list<const char*> allowed) const {
    for (const auto& [k, v] : obj_.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || k == a;
      if (!ok) fail(k, "is not a recognized field");
    }
  }

 private:
  const Json& obj_;
  std::string path_;
};

inline std::string line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

/// Re-raises an expression parse error under the field that holds it.
template <typename F>
auto with_field(const Fields& f, const std::string& key, F&& build) {
  try {
    return build();
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::parse) throw;
    f.fail(key, std::string("does not parse: ") + e.what());
  }
}

}  // namespace detail

inline ModelSpec parse_model(const detail::Fields& f) {
  f.only({"kind", "drift", "input", "singular_floor", "gamma_scale", "drift_bound", "declared"});
  ModelSpec m;
  m.kind = f.text("kind");
  if (m.kind == "motor_surge" || m.kind == "motor_decline") {
    m.motor.drift = f.text("drift", m.motor.drift);
    m.motor.singular_floor = f.positive("singular_floor", m.motor.singular_floor);
    m.motor.gamma_scale = f.positive("gamma_scale", m.motor.gamma_scale);
    m.motor.drift_bound = f.positive("drift_bound", m.motor.drift_bound);
    detail::with_field(f, "drift", [&] { return detail::compile_drift(m.motor.drift); });
  } else if (m.kind == "control_affine") {
    m.drift = f.texts("drift");
    const Json& in = f.raw("input");
    if (!in.is_array() || in.size() != m.drift.size()) f.fail("input", "must have one row per drift entry");
    for (const auto& row : in) {
      if (!row.is_array() || row.empty()) f.fail("input", "rows must be nonempty arrays of strings");
      std::vector<std::string> r;
      for (const auto& e : row) {
        if (!e.is_string()) f.fail("input", "rows must be nonempty arrays of strings");
        r.push_back(e.get<std::string>());
      }
      m.input.push_back(std::move(r));
    }
    detail::with_field(f, "drift", [&] { return make_control_affine(m.drift, m.input); });
    if (f.has("declared")) {
      const detail::Fields d = f.object("declared");
      d.only({"theta", "kf", "gamma"});
      if (d.has("theta")) m.declared_theta = d.positive("theta");
      if (d.has("kf")) m.declared_kf = d.positive("kf");
      if (d.has("gamma")) {
        m.declared_gamma = d.number("gamma");
        if (*m.declared_gamma < 0.0) d.fail("gamma", "must be nonnegative");
      }
    }
  } else {
    f.fail("kind", "must be motor_surge, motor_decline or control_affine");
  }
  return m;
}

inline ConstraintSpec parse_constraint(const detail::Fields& f) {
  f.only({"kind", "box_radius", "rate", "normal", "offset", "components", "resolution"});
  ConstraintSpec c;
  c.kind = f.text("kind");
  c.box_radius = f.positive("box_radius", c.box_radius);
  c.resolution = f.has("resolution") ? f.positive("resolution") : 0.0;
  if (c.kind == "unit_ball_complement") {
    c.rate = f.number("rate", 0.0);
  } else if (c.kind == "half_plane") {
    c.normal = f.numbers("normal");
    c.offset = f.number("offset");
  } else if (c.kind == "expression") {
    c.components = f.texts("components");
  } else {
    f.fail("kind", "must be unit_ball_complement, half_plane or expression");
  }
  return c;
}

inline ReferenceSpec parse_reference(const detail::Fields& f, const std::filesystem::path& base) {
  f.only({"kind", "level", "descend_until", "hold_until", "feedback_gain", "control_bound", "value", "times",
          "controls", "path"});
  ReferenceSpec r;
  r.kind = f.text("kind");
  if (r.kind == "boundary_tracking") {
    r.level = f.positive("level", r.level);
    r.descend_until = f.positive("descend_until", r.descend_until);
    r.hold_until = f.positive("hold_until", r.hold_until);
    r.feedback_gain = f.positive("feedback_gain", r.feedback_gain);
    r.control_bound = f.positive("control_bound", r.control_bound);
    if (!(r.hold_until > r.descend_until)) f.fail("hold_until", "must exceed descend_until");
  } else if (r.kind == "constant") {
    r.value = f.numbers("value");
  } else if (r.kind == "samples") {
    r.times = f.numbers("times");
    const Json& c = f.raw("controls");
    if (!c.is_array() || c.size() != r.times.size()) f.fail("controls", "must have one row per time");
    for (const auto& row : c) {
      if (!row.is_array() || row.empty()) f.fail("controls", "rows must be nonempty arrays of numbers");
      std::vector<double> v;
      for (const auto& e : row) {
        if (!e.is_number()) f.fail("controls", "rows must be nonempty arrays of numbers");
        v.push_back(e.get<double>());
      }
      r.controls.push_back(std::move(v));
    }
  } else if (r.kind == "csv") {
    std::filesystem::path p = f.text("path");
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) f.fail("path", "names a file that does not exist: " + p.string());
    r.path = p.string();
  } else {
    f.fail("kind", "must be boundary_tracking, constant, samples or csv");
  }
  return r;
}

inline WeightSpec parse_weight(const detail::Fields& f) {
  f.only({"kind", "matrix", "start", "end"});
  WeightSpec w;
  w.kind = f.text("kind", "constant");
  if (w.kind == "constant") {
    w.start = w.end = f.matrix("matrix");
  } else if (w.kind == "linear_ramp") {
    w.start = f.matrix("start");
    w.end = f.matrix("end");
    if (w.start.rows() != w.end.rows() || w.start.cols() != w.end.cols()) f.fail("end", "must match start's shape");
  } else {
    f.fail("kind", "must be constant or linear_ramp");
  }
  if (w.start.rows() != w.start.cols()) f.fail(w.kind == "constant" ? "matrix" : "start", "must be square");
  return w;
}

/// Parses a scenario. Relative CSV paths resolve against `base`.
inline Scenario parse_scenario_fields(const Json& j, const std::filesystem::path& base);

/// Parses a scenario. Field diagnostics carry the line and column of the
/// offending key when it appears in the text.
inline Scenario parse_scenario(const std::string& text, const std::filesystem::path& base = {}) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse, "config is not valid JSON at " + detail::line_column(text, e.byte ? e.byte - 1 : 0),
                e.what());
  }
  try {
    return parse_scenario_fields(j, base);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::parse) throw;
    std::string msg = e.what();
    if (msg.rfind("parse: ", 0) == 0) msg.erase(0, 7);
    const auto open = msg.find("field '");
    if (open == std::string::npos) throw;
    const auto close = msg.find('\'', open + 7);
    std::string path = msg.substr(open + 7, close - open - 7);
    const auto dot = path.rfind('.');
    const std::string key = "\"" + (dot == std::string::npos ? path : path.substr(dot + 1)) + "\"";
    // The first occurrence after the parent key, when the parent is named.
    std::size_t from = 0;
    if (dot != std::string::npos) {
      const auto parent_dot = path.rfind('.', dot - 1);
      const std::string parent =
          "\"" + path.substr(parent_dot == std::string::npos ? 0 : parent_dot + 1,
                             dot - (parent_dot == std::string::npos ? 0 : parent_dot + 1)) + "\"";
      const auto p = text.find(parent);
      if (p != std::string::npos) from = p;
    }
    const auto at = text.find(key, from);
    if (at == std::string::npos) throw;
    throw Error(ErrorKind::parse, msg + " at " + detail::line_column(text, at), e.witness());
  }
}

inline Scenario parse_scenario_fields(const Json& j, const std::filesystem::path& base) {
  const detail::Fields f(j, "");
  f.only({"name", "model", "constraint", "reference", "x0", "T", "lambda", "step", "weight", "seed", "out", "eps0",
          "delta0", "fallback", "eps_min"});
  Scenario s;
  s.name = f.text("name", "scenario");
  s.model = parse_model(f.object("model"));
  s.constraint = parse_constraint(f.object("constraint"));
  s.reference = parse_reference(f.object("reference"), base);
  s.x0 = f.numbers("x0");
  s.T = f.positive("T");
  s.lambda = f.positive("lambda");
  s.step = f.positive("step");
  if (s.step > s.T) f.fail("step", "must not exceed T");
  if (f.has("weight")) {
    s.weight = parse_weight(f.object("weight"));
  } else {
    s.weight.start = s.weight.end = Mat();
  }
  s.seed = f.count("seed", 1);
  s.out = f.text("out", "out");
  s.eps0 = f.positive("eps0", s.eps0);
  s.delta0 = f.positive("delta0", s.delta0);
  s.fallback = f.flag("fallback", true);
  s.eps_min = f.positive("eps_min", s.eps_min);

  // Dimension consistency.
  const int n = static_cast<int>(s.x0.size());
  const bool motor = s.model.kind != "control_affine";
  const int model_n = motor ? 1 : static_cast<int>(s.model.drift.size());
  const int model_m = motor ? 1 : static_cast<int>(s.model.input.front().size());
  if (n != model_n) f.fail("x0", "has " + std::to_string(n) + " entries; the model has " + std::to_string(model_n));
  if (s.constraint.kind == "half_plane" && static_cast<int>(s.constraint.normal.size()) != n) {
    f.fail("constraint.normal", "must have one entry per state");
  }
  if (s.reference.kind == "constant" && static_cast<int>(s.reference.value.size()) != model_m) {
    f.fail("reference.value", "must have one entry per control");
  }
  for (const auto& row : s.reference.controls) {
    if (static_cast<int>(row.size()) != model_m) f.fail("reference.controls", "rows must have one entry per control");
  }
  if (s.reference.kind == "boundary_tracking" && (n != 1 || model_m != 1)) {
    f.fail("reference.kind", "boundary_tracking needs a scalar state and control");
  }
  if (s.weight.start.size() == 0) {
    s.weight.start = s.weight.end = Mat::Identity(model_m, model_m);
  } else if (s.weight.start.rows() != model_m) {
    f.fail("weight", "must be " + std::to_string(model_m) + " x " + std::to_string(model_m));
  }

  Json id;
  for (const char* k : {"model", "constraint", "reference", "x0", "T", "step"}) id[k] = j.at(k);
  id["eps0"] = s.eps0;
  id["delta0"] = s.delta0;
  s.identity = id.dump();
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::parse, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), std::filesystem::path(path).parent_path());
}

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

inline std::string scenario_hash(const Scenario& s) { return fnv1a_hex(s.identity); }

// ---------------------------------------------------------------------------
// Builders.

inline DynamicsModel build_model(const ModelSpec& m) {
  if (m.kind == "motor_surge") return make_motor_surge(m.motor);
  if (m.kind == "motor_decline") return make_motor_decline(m.motor);
  DynamicsModel model = make_control_affine(m.drift, m.input);
  if (m.declared_theta) model.declared.theta = [c = *m.declared_theta](double) { return c; };
  if (m.declared_kf) model.declared.kf = [c = *m.declared_kf](double) { return c; };
  if (m.declared_gamma) {
    const double c = *m.declared_gamma;
    model.declared.gamma = [c](double) { return c; };
    model.declared.gamma_integral = [c](double s, double t) { return c * (t - s); };
  }
  return model;
}

inline ConstraintField build_field(const ConstraintSpec& c, int n) {
  ConstraintField f;
  if (c.kind == "unit_ball_complement") {
    f = unit_ball_complement(n, c.box_radius, c.rate);
  } else if (c.kind == "half_plane") {
    f = half_plane(Eigen::Map<const Vec>(c.normal.data(), static_cast<Eigen::Index>(c.normal.size())), c.offset,
                   Box::cube(n, c.box_radius));
  } else {
    f = expression_field(c.components, n, Box::cube(n, c.box_radius));
  }
  f.resolution = c.resolution;
  return f;
}

inline WeightFn build_weight(const WeightSpec& w, double T) {
  if (w.kind == "constant") return constant_weight(w.start);
  const Mat a = w.start, b = w.end;
  return [a, b, T](double t) -> Mat { return a + (t / T) * (b - a); };
}

inline TimeGrid base_grid(const Scenario& s) { return TimeGrid::uniform(0.0, s.T, s.step); }

/// Integrator settings shared by every command, so that reference and repaired
/// trajectories live on comparable grids.
inline IntegratorConfig integrator_for(const Scenario& s) { return IntegratorConfig{s.step, false, 1e-6}; }

namespace detail {

/// Solves f(t, x, u) = v for scalar u by bisection on [-bound, bound];
/// f is assumed nondecreasing in u. Clamps when v is out of reach.
inline double solve_scalar_control(const DynamicsModel& model, double t, double x, double v, double bound) {
  auto f = [&](double u) { return model.eval(t, Vec::Constant(1, x), Vec::Constant(1, u))[0]; };
  double lo = -bound, hi = bound;
  if (f(lo) >= v) return lo;
  if (f(hi) <= v) return hi;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++i) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < v) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Feedback tracking of r(t): |x| falls linearly from |x0| to `level` on
/// [0, descend_until], holds until hold_until, then rises at the same speed.
inline ControlSignal boundary_tracking_control(const Scenario& s, const DynamicsModel& model) {
  const ReferenceSpec& r = s.reference;
  const double x0 = s.x0.front();
  const double sign = x0 >= 0.0 ? 1.0 : -1.0;
  const double speed = (std::abs(x0) - r.level) / r.descend_until;
  auto target = [&](double t) {
    if (t <= r.descend_until) return sign * (std::abs(x0) - speed * t);
    if (t <= r.hold_until) return sign * r.level;
    return sign * (r.level + speed * (t - r.hold_until));
  };
  auto slope = [&](double t) {
    if (t < r.descend_until) return -sign * speed;
    if (t < r.hold_until) return 0.0;
    return sign * speed;
  };
  const TimeGrid g = base_grid(s);
  const IntegratorConfig ic = integrator_for(s);
  std::vector<Vec> us(g.size(), Vec::Zero(1));
  Vec x = Vec::Constant(1, x0);
  for (std::size_t j = 0; j + 1 < g.size(); ++j) {
    const double t = g[j];
    const double tr = std::nextafter(t, t + 1.0);  // controls act on [t_j, t_{j+1})
    const double v = slope(t) - r.feedback_gain * (x[0] - target(t));
    us[j][0] = solve_scalar_control(model, tr, x[0], v, r.control_bound);
    const ControlSignal piece(TimeGrid({t, g[j + 1]}), {us[j], us[j]});
    x = integrate(model, piece, x, t, g[j + 1], ic).states().back();
  }
  us.back() = us[g.size() - 2];
  return ControlSignal(g, std::move(us));
}

}  // namespace detail

inline ControlSignal build_reference_control(const Scenario& s, const DynamicsModel& model) {
  const ReferenceSpec& r = s.reference;
  const TimeGrid g = base_grid(s);
  if (r.kind == "boundary_tracking") return detail::boundary_tracking_control(s, model);
  if (r.kind == "constant") {
    return ControlSignal::constant(g, Eigen::Map<const Vec>(r.value.data(), static_cast<Eigen::Index>(r.value.size())));
  }
  ControlSignal u;
  if (r.kind == "samples") {
    std::vector<Vec> vals;
    for (const auto& row : r.controls) vals.push_back(Eigen::Map<const Vec>(row.data(), static_cast<Eigen::Index>(row.size())));
    u = ControlSignal(TimeGrid(r.times), std::move(vals));
  } else {
    u = read_control_csv_file(r.path);
  }
  if (std::abs(u.grid().t0()) > kTimeTol || std::abs(u.grid().t1() - s.T) > kTimeTol) {
    throw Error(ErrorKind::parse, "field 'reference' must cover [0, T]");
  }
  if (u.dim() != model.control_dim) throw Error(ErrorKind::parse, "field 'reference' has the wrong control dimension");
  return u;
}

/// Everything a command needs, built once from the config.
struct ScenarioContext {
  Scenario scenario;
  DynamicsModel model;
  ConstraintField field;
  ControlSignal ubar;
  Trajectory xbar;
  WeightFn weight;
  TimeGrid grid;
};

inline ScenarioContext build_context(const Scenario& s) {
  ScenarioContext c;
  c.scenario = s;
  c.model = build_model(s.model);
  c.field = build_field(s.constraint, c.model.state_dim);
  c.grid = base_grid(s);
  c.ubar = build_reference_control(s, c.model);
  c.xbar = integrate(c.model, c.ubar, Eigen::Map<const Vec>(s.x0.data(), static_cast<Eigen::Index>(s.x0.size())), 0.0,
                     s.T, integrator_for(s));
  c.weight = build_weight(s.weight, s.T);
  return c;
}

inline BundleOptions bundle_options_for(const Scenario& s) {
  BundleOptions o;
  o.eps0 = s.eps0;
  o.delta0 = s.delta0;
  o.seed = s.seed;
  o.lambdas = {0.4, 0.2, 0.1, 0.05};
  if (std::find(o.lambdas.begin(), o.lambdas.end(), s.lambda) == o.lambdas.end()) o.lambdas.push_back(s.lambda);
  return o;
}

inline RepairOptions repair_options_for(const Scenario& s) {
  RepairOptions o;
  o.integrator = integrator_for(s);
  o.fallback = s.fallback;
  o.eps_min = s.eps_min;
  return o;
}

}  // namespace tightening
