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

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tightening/errors.hpp"

namespace tightening {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Two times closer than this are the same node.
inline constexpr double kTimeTol = 1e-11;

/// Ordered time nodes covering [t0, t1]. `step` bounds every consecutive gap.
class TimeGrid {
 public:
  TimeGrid() = default;

  static TimeGrid uniform(double t0, double t1, double step) {
    if (!(step > 0.0) || !(t1 > t0)) {
      throw Error(ErrorKind::domain, "uniform grid needs t1 > t0 and step > 0");
    }
    const auto n = static_cast<std::size_t>(std::ceil((t1 - t0) / step - 1e-9));
    std::vector<double> nodes(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
      nodes[i] = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(n);
    }
    nodes.back() = t1;
    return TimeGrid(std::move(nodes), step);
  }

  /// Validates ordering; the step is the declared bound, or the widest gap when 0.
  TimeGrid(std::vector<double> nodes, double step = 0.0) : nodes_(std::move(nodes)) {
    if (nodes_.size() < 2) throw Error(ErrorKind::domain, "time grid needs at least two nodes");
    double widest = 0.0;
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
      const double gap = nodes_[i] - nodes_[i - 1];
      if (!(gap > 0.0) || !std::isfinite(nodes_[i])) {
        throw Error(ErrorKind::domain, "time grid nodes must be finite and strictly increasing");
      }
      widest = std::max(widest, gap);
    }
    if (step <= 0.0) step = widest;
    if (widest > step * (1.0 + 1e-9)) {
      throw Error(ErrorKind::domain, "time grid gap exceeds declared step");
    }
    step_ = step;
  }

  double t0() const { return nodes_.front(); }
  double t1() const { return nodes_.back(); }
  double step() const { return step_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<double>& nodes() const { return nodes_; }
  double operator[](std::size_t i) const { return nodes_[i]; }

  bool contains(double t) const { return t >= t0() - kTimeTol && t <= t1() + kTimeTol; }

  /// Index of the greatest node <= t (clamped to the domain).
  std::size_t locate(double t) const {
    auto it = std::upper_bound(nodes_.begin(), nodes_.end(), t + kTimeTol * 0.5);
    if (it == nodes_.begin()) return 0;
    return static_cast<std::size_t>(std::distance(nodes_.begin(), it)) - 1;
  }

  /// Union with extra nodes inside [t0, t1]; near-duplicates keep the existing node.
  TimeGrid merged(std::span<const double> extra) const {
    std::vector<double> all = nodes_;
    for (double t : extra) {
      if (t > t0() + kTimeTol && t < t1() - kTimeTol) all.push_back(t);
    }
    std::stable_sort(all.begin(), all.end());
    std::vector<double> out;
    out.reserve(all.size());
    for (double t : all) {
      if (out.empty() || t - out.back() > kTimeTol) out.push_back(t);
    }
    out.back() = t1();
    return TimeGrid(std::move(out), step_);
  }

 private:
  std::vector<double> nodes_;
  double step_ = 0.0;
};

/// Piecewise-constant-left control: the value at the greatest node <= t.
class ControlSignal {
 public:
  ControlSignal() = default;
  ControlSignal(TimeGrid grid, std::vector<Vec> values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (values_.size() != grid_.size()) {
      throw Error(ErrorKind::shape, "control needs one value per node");
    }
    const auto m = values_.front().size();
    for (const auto& v : values_) {
      if (v.size() != m) throw Error(ErrorKind::shape, "control dimension varies across nodes");
      if (!v.allFinite()) throw Error(ErrorKind::validation, "control values must be finite");
    }
  }

  static ControlSignal constant(const TimeGrid& grid, const Vec& value) {
    return ControlSignal(grid, std::vector<Vec>(grid.size(), value));
  }

  const TimeGrid& grid() const { return grid_; }
  const std::vector<Vec>& values() const { return values_; }
  Eigen::Index dim() const { return values_.front().size(); }

  const Vec& operator()(double t) const {
    if (!grid_.contains(t)) {
      throw Error(ErrorKind::domain, "control evaluated outside [" + std::to_string(grid_.t0()) + ", " +
                                         std::to_string(grid_.t1()) + "] at t=" + std::to_string(t));
    }
    return values_[grid_.locate(t)];
  }

  /// Same function on a finer node set.
  ControlSignal refined(std::span<const double> extra) const {
    TimeGrid g = grid_.merged(extra);
    std::vector<Vec> vals;
    vals.reserve(g.size());
    for (double t : g.nodes()) vals.push_back((*this)(t));
    return ControlSignal(std::move(g), std::move(vals));
  }

  double sup_norm() const {
    double m = 0.0;
    for (const auto& v : values_) m = std::max(m, v.norm());
    return m;
  }

 private:
  TimeGrid grid_;
  std::vector<Vec> values_;
};

inline const Vec& eval_control(const ControlSignal& sig, double t) { return sig(t); }

/// State samples of an f-trajectory; linear interpolation between nodes.
class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(TimeGrid grid, std::vector<Vec> states) : grid_(std::move(grid)), states_(std::move(states)) {
    if (states_.size() != grid_.size()) {
      throw Error(ErrorKind::shape, "trajectory needs one state per node");
    }
    const auto n = states_.front().size();
    for (const auto& x : states_) {
      if (x.size() != n) throw Error(ErrorKind::shape, "state dimension varies across nodes");
      if (!x.allFinite()) throw Error(ErrorKind::validation, "trajectory states must be finite");
    }
  }

  const TimeGrid& grid() const { return grid_; }
  const std::vector<Vec>& states() const { return states_; }
  Eigen::Index dim() const { return states_.front().size(); }
  std::size_t size() const { return states_.size(); }
  double time(std::size_t i) const { return grid_[i]; }
  const Vec& state(std::size_t i) const { return states_[i]; }

  Vec at(double t) const {
    if (!grid_.contains(t)) throw Error(ErrorKind::domain, "trajectory evaluated outside its domain");
    const std::size_t i = grid_.locate(t);
    if (i + 1 >= grid_.size()) return states_.back();
    const double a = grid_[i];
    const double b = grid_[i + 1];
    const double w = std::clamp((t - a) / (b - a), 0.0, 1.0);
    if (w == 0.0) return states_[i];
    return (1.0 - w) * states_[i] + w * states_[i + 1];
  }

  double sup_norm() const {
    double m = 0.0;
    for (const auto& x : states_) m = std::max(m, x.norm());
    return m;
  }

  /// Samples on another grid (linear interpolation).
  Trajectory resampled(const TimeGrid& g) const {
    std::vector<Vec> xs;
    xs.reserve(g.size());
    for (double t : g.nodes()) xs.push_back(at(t));
    return Trajectory(g, std::move(xs));
  }

 private:
  TimeGrid grid_;
  std::vector<Vec> states_;
};

/// Sampled modulus of continuity: values at ascending window widths,
/// linearly interpolated in between, constant past the last width.
class ModulusTable {
 public:
  ModulusTable() : deltas_{0.0}, values_{0.0} {}
  ModulusTable(std::vector<double> deltas, std::vector<double> values, double grid_step = 0.0)
      : deltas_(std::move(deltas)), values_(std::move(values)), grid_step_(grid_step) {
    if (deltas_.size() != values_.size() || deltas_.empty()) {
      throw Error(ErrorKind::shape, "modulus table needs matching non-empty columns");
    }
    if (deltas_.front() != 0.0 || values_.front() != 0.0) {
      throw Error(ErrorKind::validation, "modulus table must start at (0, 0)");
    }
    for (std::size_t i = 1; i < deltas_.size(); ++i) {
      if (!(deltas_[i] > deltas_[i - 1])) throw Error(ErrorKind::validation, "modulus deltas must increase");
      if (values_[i] < values_[i - 1]) throw Error(ErrorKind::validation, "modulus values must be nondecreasing");
    }
  }

  static ModulusTable zero() { return ModulusTable(); }

  double operator()(double delta) const {
    if (delta < 0.0) throw Error(ErrorKind::domain, "negative window width");
    if (delta >= deltas_.back()) return values_.back();
    auto it = std::upper_bound(deltas_.begin(), deltas_.end(), delta);
    const std::size_t j = static_cast<std::size_t>(std::distance(deltas_.begin(), it));
    const double a = deltas_[j - 1], b = deltas_[j];
    const double w = (delta - a) / (b - a);
    return values_[j - 1] + w * (values_[j] - values_[j - 1]);
  }

  const std::vector<double>& deltas() const { return deltas_; }
  const std::vector<double>& values() const { return values_; }
  double grid_step() const { return grid_step_; }

 private:
  std::vector<double> deltas_;
  std::vector<double> values_;
  double grid_step_ = 0.0;
};

enum class WindowMode { integral_sup, variation_sup };

namespace detail {

inline std::vector<double> cumulative_trapezoid(const TimeGrid& grid, std::span<const double> f) {
  std::vector<double> c(grid.size(), 0.0);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    c[i] = c[i - 1] + 0.5 * (f[i] + f[i - 1]) * (grid[i] - grid[i - 1]);
  }
  return c;
}

inline void check_samples(const TimeGrid& grid, std::span<const double> f) {
  if (f.size() != grid.size()) throw Error(ErrorKind::shape, "one sample per grid node required");
  for (double v : f) {
    if (!std::isfinite(v)) throw Error(ErrorKind::validation, "samples must be finite");
  }
}

}  // namespace detail

/// Sup over grid-aligned windows [s, t] with t - s <= delta of either the
/// trapezoidal integral over the window or |f(t) - f(s)|.
inline double sup_window_modulus(const TimeGrid& grid, std::span<const double> f, double delta, WindowMode mode) {
  if (delta < 0.0) throw Error(ErrorKind::domain, "negative window width");
  detail::check_samples(grid, f);
  const auto c = detail::cumulative_trapezoid(grid, f);
  double best = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t j = i + 1; j < grid.size() && grid[j] - grid[i] <= delta + kTimeTol; ++j) {
      const double v = mode == WindowMode::integral_sup ? c[j] - c[i] : std::abs(f[j] - f[i]);
      best = std::max(best, v);
    }
  }
  return best;
}

/// Tabulates sup over grid windows of `pair_value(i, j)` at widths k * grid.step(),
/// k = 0..ceil(max_delta / step). Values are made nondecreasing by a running max.
inline ModulusTable window_sup_table(const TimeGrid& grid, double max_delta,
                                     const std::function<double(std::size_t, std::size_t)>& pair_value) {
  const double h = grid.step();
  const auto buckets = static_cast<std::size_t>(std::ceil(max_delta / h - 1e-9));
  std::vector<double> vals(buckets + 1, 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t j = i + 1; j < grid.size(); ++j) {
      const double w = grid[j] - grid[i];
      const auto k = static_cast<std::size_t>(std::max(0.0, std::ceil(w / h - 1e-9)));
      if (k > buckets) break;
      vals[k] = std::max(vals[k], pair_value(i, j));
    }
  }
  std::vector<double> deltas(buckets + 1);
  for (std::size_t k = 0; k <= buckets; ++k) {
    deltas[k] = static_cast<double>(k) * h;
    if (k > 0) vals[k] = std::max(vals[k], vals[k - 1]);
  }
  vals[0] = 0.0;
  return ModulusTable(std::move(deltas), std::move(vals), h);
}

inline ModulusTable modulus_table(const TimeGrid& grid, std::span<const double> f, double max_delta, WindowMode mode) {
  detail::check_samples(grid, f);
  const auto c = detail::cumulative_trapezoid(grid, f);
  std::vector<double> fv(f.begin(), f.end());
  if (mode == WindowMode::integral_sup) {
    return window_sup_table(grid, max_delta, [&](std::size_t i, std::size_t j) { return c[j] - c[i]; });
  }
  return window_sup_table(grid, max_delta, [&](std::size_t i, std::size_t j) { return std::abs(fv[j] - fv[i]); });
}

inline double trapezoid(const TimeGrid& grid, std::span<const double> f) {
  detail::check_samples(grid, f);
  return detail::cumulative_trapezoid(grid, f).back();
}

/// Max Euclidean state distance, evaluated on the union of both node sets.
inline double linf_distance(const Trajectory& a, const Trajectory& b) {
  if (a.dim() != b.dim()) throw Error(ErrorKind::shape, "state dimensions differ");
  if (std::abs(a.grid().t0() - b.grid().t0()) > kTimeTol || std::abs(a.grid().t1() - b.grid().t1()) > kTimeTol) {
    throw Error(ErrorKind::domain, "trajectories cover different time windows");
  }
  if (a.grid().nodes() == b.grid().nodes()) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a.state(i) - b.state(i)).norm());
    return m;
  }
  const TimeGrid g = a.grid().merged(b.grid().nodes());
  double m = 0.0;
  for (double t : g.nodes()) m = std::max(m, (a.at(t) - b.at(t)).norm());
  return m;
}

/// Time-varying PSD weight on controls.
using WeightFn = std::function<Mat(double)>;

inline WeightFn constant_weight(const Mat& r) {
  return [r](double) { return r; };
}

namespace detail {

inline const Mat& checked_psd(const Mat& r, double t) {
  if (r.rows() != r.cols()) throw Error(ErrorKind::shape, "weight matrix must be square");
  const Mat sym = 0.5 * (r + r.transpose());
  if ((r - sym).norm() > 1e-9 * (1.0 + r.norm())) {
    throw Error(ErrorKind::validation, "weight matrix not symmetric at t=" + std::to_string(t));
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-10 * (1.0 + r.norm())) {
    throw Error(ErrorKind::validation, "weight matrix not positive semidefinite at t=" + std::to_string(t));
  }
  return r;
}

}  // namespace detail

/// Integral of u' R(t) u over the control's domain. Each constant piece uses
/// Simpson's rule on R, exact for weights up to quadratic in t.
inline double weighted_l2_cost(const ControlSignal& u, const WeightFn& weight) {
  const auto& g = u.grid();
  double total = 0.0;
  Mat left = weight(g[0]);
  detail::checked_psd(left, g[0]);
  for (std::size_t i = 0; i + 1 < g.size(); ++i) {
    const double a = g[i], b = g[i + 1];
    const Mat mid = weight(0.5 * (a + b));
    const Mat right = weight(b);
    detail::checked_psd(mid, 0.5 * (a + b));
    detail::checked_psd(right, b);
    const Vec& v = u.values()[i];
    if (left.rows() != v.size()) throw Error(ErrorKind::shape, "weight/control dimension mismatch");
    const Mat integral = (b - a) / 6.0 * (left + 4.0 * mid + right);
    total += v.dot(integral * v);
    left = right;
  }
  return total;
}

// ---------------------------------------------------------------------------
// CSV: header `t,x1..xN` (or u1..uM), shortest round-trip decimal formatting.

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void write_rows(std::ostream& os, char prefix, const TimeGrid& g, const std::vector<Vec>& rows) {
  os << 't';
  for (Eigen::Index k = 0; k < rows.front().size(); ++k) os << ',' << prefix << (k + 1);
  os << '\n';
  for (std::size_t i = 0; i < g.size(); ++i) {
    os << format_double(g[i]);
    for (Eigen::Index k = 0; k < rows[i].size(); ++k) os << ',' << format_double(rows[i][k]);
    os << '\n';
  }
}

inline double parse_double(std::string_view s, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorKind::parse, "bad number '" + std::string(s) + "' on line " + std::to_string(line));
  }
  return v;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::pair<TimeGrid, std::vector<Vec>> read_rows(std::istream& is, char prefix) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorKind::parse, "empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 2 || header[0] != "t") throw Error(ErrorKind::parse, "CSV header must start with 't'");
  for (std::size_t k = 1; k < header.size(); ++k) {
    if (header[k] != std::string(1, prefix) + std::to_string(k)) {
      throw Error(ErrorKind::parse, "CSV column " + std::to_string(k + 1) + " must be '" + prefix + std::to_string(k) + "'");
    }
  }
  const auto dim = static_cast<Eigen::Index>(header.size() - 1);
  std::vector<double> ts;
  std::vector<Vec> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_commas(line);
    if (static_cast<Eigen::Index>(cells.size()) != dim + 1) {
      throw Error(ErrorKind::shape, "line " + std::to_string(lineno) + " has wrong column count");
    }
    ts.push_back(parse_double(cells[0], lineno));
    Vec v(dim);
    for (Eigen::Index k = 0; k < dim; ++k) v[k] = parse_double(cells[static_cast<std::size_t>(k) + 1], lineno);
    rows.push_back(std::move(v));
  }
  return {TimeGrid(std::move(ts)), std::move(rows)};
}

}  // namespace detail

inline void write_csv(std::ostream& os, const Trajectory& x) { detail::write_rows(os, 'x', x.grid(), x.states()); }
inline void write_csv(std::ostream& os, const ControlSignal& u) { detail::write_rows(os, 'u', u.grid(), u.values()); }

template <class T>
void write_csv_file(const std::string& path, const T& obj) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::validation, "cannot open " + path + " for writing");
  write_csv(os, obj);
}

inline Trajectory read_trajectory_csv(std::istream& is) {
  auto [g, rows] = detail::read_rows(is, 'x');
  return Trajectory(std::move(g), std::move(rows));
}

inline ControlSignal read_control_csv(std::istream& is) {
  auto [g, rows] = detail::read_rows(is, 'u');
  return ControlSignal(std::move(g), std::move(rows));
}

inline Trajectory read_trajectory_csv_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::parse, "cannot open " + path);
  return read_trajectory_csv(is);
}

inline ControlSignal read_control_csv_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::parse, "cannot open " + path);
  return read_control_csv(is);
}

}  // namespace tightening
