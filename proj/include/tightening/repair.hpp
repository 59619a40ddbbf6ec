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

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tightening/dynamics.hpp"
#include "tightening/errors.hpp"
#include "tightening/geometry.hpp"
#include "tightening/hypotheses.hpp"
#include "tightening/propagation.hpp"
#include "tightening/signals.hpp"

namespace tightening {

/// Constants of the construction. Everything but eps and rho_bar_eps is
/// independent of lambda.
struct RepairConstants {
  double Delta = 0.0;
  double k = 0.0;
  double rho_hat = 0.0;
  double eps = 0.0;
  int N0 = 0;
  std::vector<double> partition;
  double M_Delta = 0.0;
  double C_vDelta = 0.0;
  double R = 0.0;
  double omega_f_Delta = 0.0;
  double omega_f_T = 0.0;
  double rho_bar_eps = 0.0;
  ModulusTable omega_gamma;
  ModulusTable omega_f;
  ModulusTable omega_bar;
  ModulusTable omega_R;
  double theta_l1 = 0.0;
  double theta_l2 = 0.0;
  double ubar_l2 = 0.0;
  double betau_l2 = 0.0;
  double xbar_linf = 0.0;
  double mu_bar = 0.0;
  double step = 0.0;
};

// ---------------------------------------------------------------------------
// g(rho) = e^{omega_f(T)} [omega_bar(k rho) + k rho (C_{v,Delta} + M_Delta e^{2 omega_f(Delta)})],
// g~(rho) = rho + g(rho), d~_n(rho) = sum_{i=1..n} g~^{(i)}(rho).

struct GrowthMaps {
  const RepairConstants* c;

  double g(double rho) const {
    if (rho <= 0.0) return 0.0;
    if (!std::isfinite(rho)) return std::numeric_limits<double>::infinity();
    const double kr = c->k * rho;
    return std::exp(c->omega_f_T) *
           (c->omega_bar(kr) + kr * (c->C_vDelta + c->M_Delta * std::exp(2.0 * c->omega_f_Delta)));
  }
  double g_tilde(double rho) const { return rho + g(rho); }
  /// g~ composed n times.
  double compose(double rho, int n) const {
    for (int i = 0; i < n; ++i) rho = g_tilde(rho);
    return rho;
  }
  /// Partial sums d~_1 .. d~_n.
  std::vector<double> d_tilde(double rho, int n) const {
    std::vector<double> out(static_cast<std::size_t>(n));
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      rho = g_tilde(rho);
      acc += rho;
      out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
  }
  double d_tilde_n(double rho, int n) const { return n == 0 ? 0.0 : d_tilde(rho, n).back(); }
};

/// The three smallness conditions on rho_bar_eps, in order; the first violated one, or empty.
inline std::string violated_eps_condition(const RepairConstants& c, double lambda) {
  const GrowthMaps gm{&c};
  if (!(c.rho_bar_eps <= c.rho_hat)) return "rho_bar_eps <= rho_hat";
  const double d = gm.d_tilde_n(c.rho_bar_eps, c.N0);
  if (!(d <= std::min(lambda, c.xbar_linf))) return "d~_N0(rho_bar_eps) <= min(lambda, |xbar|_inf)";
  if (!(gm.compose(c.rho_bar_eps, c.N0) <= c.rho_hat)) return "g~^N0(rho_bar_eps) <= rho_hat";
  return {};
}

/// The four inequalities tying Delta, k and M_Delta, with k = 4 / xi.
inline bool delta_conditions_hold(const HypothesisBundle& b, const RepairConstants& c, double delta) {
  const double k = 4.0 / b.xi;
  const double wf = c.omega_f(delta);
  const double m_delta = c.omega_gamma(delta) + b.M_v * wf;
  const double e = std::exp(wf);
  return b.omega_A(delta) <= b.eta / 4.0 && c.omega_bar(delta) <= b.eta / 4.0 && m_delta * e <= b.xi / 2.0 &&
         2.0 < k * b.xi && 1.0 + k * m_delta * (1.0 + e) * e <= k * b.xi / 2.0;
}

struct ScheduleOptions {
  /// Smallest Delta tried, as a fraction of the base step.
  double delta_min_steps = 1.0 / 16.0;
};

namespace detail {

inline double l2_norm(const TimeGrid& g, const std::vector<double>& f) {
  std::vector<double> sq(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) sq[i] = f[i] * f[i];
  return std::sqrt(trapezoid(g, sq));
}

/// Largest singular value.
inline double op_norm(const Mat& a) {
  if (a.size() == 0) return 0.0;
  if (a.rows() == 1 && a.cols() == 1) return std::abs(a(0, 0));
  Eigen::JacobiSVD<Mat> svd(a);
  return svd.singularValues()(0);
}

}  // namespace detail

/// Lambda-independent constants: moduli, R, Delta, k, rho_hat and the partition.
/// `xbar` is sampled on the bundle grid.
inline RepairConstants schedule_base(const HypothesisBundle& b, const Trajectory& xbar, const ControlSignal& ubar,
                                     const WeightFn& weight, const ScheduleOptions& opt = {}) {
  b.require_complete();
  const TimeGrid& g = b.grid;
  const double T = g.t1();
  RepairConstants c;
  c.step = g.step();
  const Trajectory xg = xbar.grid().nodes() == g.nodes() ? xbar : xbar.resampled(g);
  c.xbar_linf = xg.sup_norm();
  c.theta_l1 = trapezoid(g, b.theta);
  c.theta_l2 = detail::l2_norm(g, b.theta);
  c.betau_l2 = detail::l2_norm(g, b.beta_u);
  c.ubar_l2 = std::sqrt(weighted_l2_cost(ubar, constant_weight(Mat::Identity(ubar.dim(), ubar.dim()))));
  c.R = gronwall_radius(c.theta_l1, c.theta_l2, c.xbar_linf, b.M_u, c.ubar_l2, c.betau_l2);

  c.omega_gamma = modulus_table(g, b.gamma, T, WindowMode::integral_sup);
  c.omega_f = modulus_table(g, b.kf, T, WindowMode::integral_sup);
  c.omega_f_T = c.omega_f(T);

  // omega_bar(delta) = sup_{|t-s| <= delta} |xbar(t) - xbar(s)| + (R + M_u)|theta|_{L1(s,t)}
  //                    + |theta|_{L2(s,t)} (|ubar|_2 + |beta_u|_2)
  const auto th1 = detail::cumulative_trapezoid(g, b.theta);
  std::vector<double> th_sq(b.theta.size());
  for (std::size_t i = 0; i < th_sq.size(); ++i) th_sq[i] = b.theta[i] * b.theta[i];
  const auto th2 = detail::cumulative_trapezoid(g, th_sq);
  const double a1 = c.R + b.M_u;
  const double a2 = c.ubar_l2 + c.betau_l2;
  c.omega_bar = window_sup_table(g, T, [&](std::size_t i, std::size_t j) {
    return (xg.state(j) - xg.state(i)).norm() + a1 * (th1[j] - th1[i]) + std::sqrt(std::max(0.0, th2[j] - th2[i])) * a2;
  });

  std::vector<Mat> rs;
  rs.reserve(g.size());
  for (double t : g.nodes()) {
    rs.push_back(weight(t));
    c.mu_bar = std::max(c.mu_bar, std::sqrt(detail::op_norm(rs.back())));
  }
  c.omega_R = window_sup_table(g, T, [&](std::size_t i, std::size_t j) { return detail::op_norm(rs[j] - rs[i]); });

  const double delta_min = c.step * opt.delta_min_steps;
  double delta = std::min(b.xi, b.delta0);
  while (delta >= delta_min && !delta_conditions_hold(b, c, delta)) delta *= 0.5;
  if (delta < delta_min) {
    std::ostringstream w;
    w << "omega_bar(" << delta_min << ")=" << c.omega_bar(delta_min) << " eta/4=" << b.eta / 4.0
      << " omega_A=" << b.omega_A(delta_min);
    throw Error(ErrorKind::schedule, "Delta-infeasible: no Delta above the minimum meets the schedule", w.str());
  }
  c.Delta = delta;
  c.k = 4.0 / b.xi;
  c.omega_f_Delta = c.omega_f(delta);
  c.M_Delta = c.omega_gamma(delta) + b.M_v * c.omega_f_Delta;
  c.C_vDelta = b.M_v + c.M_Delta * std::exp(c.omega_f_Delta);
  c.rho_hat = std::min({1.0 / (c.k * b.M_v), b.xi / c.k, 1.0 / c.k});

  // Partition: cells of whole base steps when Delta allows, so partition
  // points coincide with integrator nodes; last cell may be shorter.
  c.partition.clear();
  if (delta >= c.step) {
    const auto m = static_cast<long long>(std::floor(delta / c.step * (1.0 + 1e-12)));
    const auto total = static_cast<long long>(std::llround(T / c.step));
    if (std::abs(static_cast<double>(total) * c.step - T) < kTimeTol) {
      for (long long k = 0; k < total; k += m) c.partition.push_back(static_cast<double>(k) * c.step);
      c.partition.push_back(T);
    }
  }
  if (c.partition.empty()) {
    const auto n0 = static_cast<long long>(std::ceil(T / delta - 1e-9));
    for (long long i = 0; i <= n0; ++i) c.partition.push_back(T * static_cast<double>(i) / static_cast<double>(n0));
  }
  c.partition.back() = T;
  c.N0 = static_cast<int>(c.partition.size()) - 1;
  return c;
}

// ---------------------------------------------------------------------------
// Report.

enum class IntervalCase { far_identity, near_zero_violation, burst };

inline const char* to_string(IntervalCase c) {
  switch (c) {
    case IntervalCase::far_identity: return "case1";
    case IntervalCase::near_zero_violation: return "case2_rho0";
    case IntervalCase::burst: return "case2";
  }
  return "?";
}

struct IterationRecord {
  int i = 0;
  double t_i = 0.0;
  double t_next = 0.0;
  double rho = 0.0;         // rho_i on [t_i, T]
  double d_boundary = 0.0;  // distance of x_i(t_i) to the boundary
  IntervalCase which = IntervalCase::far_identity;
  double tau = 0.0;  // end of the burst
  Vec u0, v0;
  double inward_margin = 0.0;
  double step_gap = 0.0;   // |x_{i+1} - x_i|_inf
  double g_bound = 0.0;    // g(rho_i)
  double d_next = 0.0;     // |x_{i+1} - xbar|_inf
  double interval_margin = 0.0;  // min over [t_i, t_{i+1}] of the interiority margin
  double cone_excess = -std::numeric_limits<double>::infinity();
  double delayed_gap_excess = -std::numeric_limits<double>::infinity();
  double max_state_norm = 0.0;
  double oscillation_excess = -std::numeric_limits<double>::infinity();
  bool v0_exceeds_M_v = false;
};

struct RepairReport {
  std::string mode;  // "certified" or "a_posteriori"
  std::vector<double> eps_tried;
  std::vector<std::string> eps_rejections;  // one per tried eps that did not pass
  std::string eps_condition_violated;       // first violated smallness condition at the chosen eps
  std::vector<IterationRecord> iterations;
  std::vector<double> rho;        // rho_0 .. rho_{N0}
  std::vector<double> d;          // d_0 .. d_{N0}
  std::vector<double> d_tilde;    // d~_1 .. d~_{N0} at rho_bar_eps
  int rho_hat_exceedances = 0;
  int recursion_rho_violations = 0;
  bool recursion_d_holds = false;
  int envelope_violations = 0;
  int oscillation_violations = 0;
  int cone_violations = 0;
  int delayed_gap_violations = 0;
  double case_tolerance = 0.0;
  double cone_max_excess = -std::numeric_limits<double>::infinity();
  double delayed_gap_max_excess = -std::numeric_limits<double>::infinity();
  double margin = 0.0;
  double linf_gap = 0.0;  // against the supplied reference
  double cost_reference = 0.0;
  double cost_repaired = 0.0;
  double cost_gap = 0.0;
  double l2_theoretical_bound = 0.0;
  double reference_consistency = 0.0;  // |integrated reference - supplied xbar|_inf
  bool margin_ok = false, linf_ok = false, cost_ok = false;
  bool passed() const { return margin_ok && linf_ok && cost_ok; }
};

struct RepairOptions {
  double eps_min = 1e-6;
  int max_halvings = 60;
  /// Accept an eps whose smallness conditions fail when the constructed
  /// trajectory meets every post-condition.
  bool fallback = true;
  IntegratorConfig integrator{1e-3, false, 1e-6};
  InwardOptions inward;
  ScheduleOptions schedule;
};

/// The three quantities the closeness guarantee is stated in. The evaluate
/// command recomputes them from files through this same function.
struct ClosenessMetrics {
  double margin = 0.0;
  double linf_gap = 0.0;
  double cost_reference = 0.0;
  double cost_repaired = 0.0;
  double cost_gap = 0.0;
};

inline ClosenessMetrics closeness_metrics(const ConstraintField& field, double eps, const Trajectory& x,
                                      const ControlSignal& u, const Trajectory& xbar, const ControlSignal& ubar,
                                      const WeightFn& weight) {
  ClosenessMetrics m;
  m.margin = interiority_margin(field, eps, x);
  m.linf_gap = linf_distance(x, xbar);
  m.cost_reference = weighted_l2_cost(ubar, weight);
  m.cost_repaired = weighted_l2_cost(u, weight);
  m.cost_gap = std::abs(m.cost_reference - m.cost_repaired);
  return m;
}

struct RepairResult {
  bool ok = false;
  std::optional<Error> failure;
  std::string failure_stage;
  Trajectory x;
  ControlSignal u;
  Trajectory xbar;  // the reference as integrated on the repair grid
  RepairConstants constants;
  RepairReport report;
};

// ---------------------------------------------------------------------------
// One interval of the construction.

struct IntervalInput {
  const Trajectory* x;   // x_i on [0, T]
  const ControlSignal* u;  // u_i on [0, T]
  int i = 0;
  double eps = 0.0;
  /// Cached rho_i, |x_i - xbar|_inf and sup |x_i|; negative means compute.
  double rho = -1.0;
  double d = -1.0;
  double sup_norm = -1.0;
};

/// x and u are empty when the interval keeps the input unchanged.
struct IntervalOutput {
  std::optional<Trajectory> x;
  std::optional<ControlSignal> u;
  IterationRecord record;
};

namespace detail {

/// Budget for a re-selection over [s, t]: the declared integral when the model
/// has one, the bundle's sampled density otherwise.
inline double selection_budget(const DynamicsModel& model, const HypothesisBundle& b, const std::vector<double>& cum,
                               double s, double t) {
  if (model.declared.gamma || model.declared.gamma_integral) return gamma_integral(model, s, t);
  auto at = [&](double x) {
    const std::size_t j = b.grid.locate(x);
    if (j + 1 >= b.grid.size()) return cum.back();
    const double w = (x - b.grid[j]) / (b.grid[j + 1] - b.grid[j]);
    return cum[j] + w * (cum[j + 1] - cum[j]);
  };
  return at(t) - at(s);
}

inline double sup_on(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, x);
  return m;
}

/// Nodes of `g` in [a, b).
inline std::vector<double> nodes_in(const std::vector<double>& nodes, double a, double b) {
  std::vector<double> out;
  for (double t : nodes) {
    if (t >= a - kTimeTol && t < b - kTimeTol) out.push_back(t);
  }
  return out;
}

/// Multiples of `step` strictly inside (a, b).
inline std::vector<double> step_nodes(double a, double b, double step) {
  std::vector<double> out;
  for (auto k = static_cast<long long>(std::floor(a / step)) + 1;; ++k) {
    const double t = static_cast<double>(k) * step;
    if (t >= b - kTimeTol) break;
    if (t > a + kTimeTol) out.push_back(t);
  }
  return out;
}

inline std::vector<double> sorted_unique(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::vector<double> out;
  for (double t : v) {
    if (out.empty() || t - out.back() > kTimeTol) out.push_back(t);
  }
  return out;
}

}  // namespace detail

/// Step 1 on [t_i, t_{i+1}] given x_i, u_i. Returns x_{i+1}, u_{i+1} on [0, T].
inline IntervalOutput repair_interval(const IntervalInput& in, const RepairConstants& c, const HypothesisBundle& b,
                                      const ConstraintField& field, const DynamicsModel& model,
                                      const Trajectory& xbar, const RepairOptions& opt,
                                      const std::vector<double>& gamma_cum) {
  const Trajectory& xi = *in.x;
  const ControlSignal& ui = *in.u;
  const double T = c.partition.back();
  const double t0 = c.partition[static_cast<std::size_t>(in.i)];
  const double t1 = c.partition[static_cast<std::size_t>(in.i) + 1];
  IterationRecord rec;
  rec.i = in.i;
  rec.t_i = t0;
  rec.t_next = t1;
  rec.rho = in.rho >= 0.0 ? in.rho : violation_sup(field, in.eps, xi, t0, T);
  const Vec x0 = xi.at(t0);
  rec.d_boundary = dist_to_boundary(field, in.eps, t0, x0);
  rec.tau = t0;

  auto identity = [&](IntervalCase which) {
    rec.which = which;
    rec.d_next = in.d >= 0.0 ? in.d : linf_distance(xi, xbar);
    rec.max_state_norm = in.sup_norm >= 0.0 ? in.sup_norm : xi.sup_norm();
    rec.interval_margin = std::numeric_limits<double>::infinity();
    for (std::size_t j = xi.grid().locate(t0); j < xi.size() && xi.time(j) <= t1 + kTimeTol; ++j) {
      if (xi.time(j) >= t0 - kTimeTol) rec.interval_margin = std::min(rec.interval_margin, field.margin(in.eps, xi.time(j), xi.state(j)));
    }
    return IntervalOutput{std::nullopt, std::nullopt, rec};
  };
  if (rec.d_boundary > b.eta / 2.0) return identity(IntervalCase::far_identity);
  // A zero violation gives an empty burst and a zero delay: the input is reproduced.
  if (rec.rho == 0.0) return identity(IntervalCase::near_zero_violation);

  rec.which = IntervalCase::burst;
  const InwardChoice inward = inward_control_at(b, field, model, in.eps, t0, x0, opt.inward);
  rec.u0 = inward.u;
  rec.v0 = inward.v;
  rec.inward_margin = inward.margin;
  rec.v0_exceeds_M_v = inward.v.norm() > b.M_v * (1.0 + 1e-12);
  const double krho = c.k * rec.rho;
  const double tau = std::min(t0 + krho, t1);
  rec.tau = tau;

  SelectionOptions sel;
  sel.radius = std::max(1.0, detail::sup_on(b.beta_u));
  // Control u_{i+1}: u_i before t_i, burst on [t_i, tau), delayed selection on
  // [tau, t_{i+1}), u_i from t_{i+1} on.
  std::vector<double> nodes;
  std::vector<Vec> values;
  for (double t : detail::nodes_in(ui.grid().nodes(), 0.0, t0)) {
    nodes.push_back(t);
    values.push_back(ui(t));
  }
  std::vector<double> burst = detail::nodes_in(ui.grid().nodes(), t0, tau);
  for (double t : detail::step_nodes(t0, tau, c.step)) burst.push_back(t);
  burst.push_back(t0);
  for (double s : detail::sorted_unique(burst)) {
    const Vec y = x0 + (s - t0) * inward.v;
    sel.budget = detail::selection_budget(model, b, gamma_cum, t0, s);
    nodes.push_back(s);
    values.push_back(shift_selection(model, t0, s, y, inward.u, sel).u);
  }
  if (tau < t1 - kTimeTol) {
    std::vector<double> delayed{tau};
    for (double t : detail::step_nodes(tau, t1, c.step)) delayed.push_back(t);
    for (double t : detail::nodes_in(ui.grid().nodes(), t0, t1 - krho)) {
      if (t + krho > tau + kTimeTol && t + krho < t1 - kTimeTol) delayed.push_back(t + krho);
    }
    for (double s : detail::sorted_unique(delayed)) {
      const double sigma = s - krho;
      sel.budget = detail::selection_budget(model, b, gamma_cum, sigma, s);
      nodes.push_back(s);
      values.push_back(shift_selection(model, sigma, s, xi.at(sigma), ui(sigma), sel).u);
    }
  }
  for (double t : detail::nodes_in(ui.grid().nodes(), t1, T + 1.0)) {
    nodes.push_back(t);
    values.push_back(ui(t));
  }
  ControlSignal unext(TimeGrid(nodes), values);

  const Trajectory tail = integrate(model, unext, x0, t0, T, opt.integrator);
  std::vector<double> xn;
  std::vector<Vec> xs;
  for (std::size_t j = 0; j < xi.size() && xi.time(j) < t0 - kTimeTol; ++j) {
    xn.push_back(xi.time(j));
    xs.push_back(xi.state(j));
  }
  for (std::size_t j = 0; j < tail.size(); ++j) {
    xn.push_back(tail.time(j));
    xs.push_back(tail.state(j));
  }
  Trajectory xnext(TimeGrid(std::move(xn)), std::move(xs));

  // Grid-verified interiority on [t_i, t_{i+1}], and the two case invariants.
  rec.interval_margin = std::numeric_limits<double>::infinity();
  const double gap_bound =
      krho * c.M_Delta * (1.0 + std::exp(c.omega_f_Delta)) * std::exp(c.omega_f_Delta);
  std::string worst_node;
  for (std::size_t j = 0; j < xnext.size(); ++j) {
    const double t = xnext.time(j);
    if (t < t0 - kTimeTol || t > t1 + kTimeTol) continue;
    const Vec& x = xnext.state(j);
    const double mg = field.margin(in.eps, t, x);
    if (mg < rec.interval_margin) {
      rec.interval_margin = mg;
      worst_node = detail::describe(t, x);
    }
    if (t <= tau + kTimeTol) {
      const double e = (x - x0 - (t - t0) * inward.v).norm() - (t - t0) * b.xi / 2.0;
      rec.cone_excess = std::max(rec.cone_excess, e);
    } else {
      const Vec y = xi.at(t - krho) + krho * inward.v;
      rec.delayed_gap_excess = std::max(rec.delayed_gap_excess, (x - y).norm() - gap_bound);
    }
  }
  if (!(rec.interval_margin > 0.0)) {
    std::ostringstream w;
    w << "interval " << in.i << " [" << t0 << ", " << t1 << "] min margin " << rec.interval_margin << " at "
      << worst_node;
    throw Error(ErrorKind::interval_repair, "repaired interval is not strictly interior", w.str());
  }
  rec.step_gap = linf_distance(xnext, xi);
  rec.g_bound = GrowthMaps{&c}.g(rec.rho);
  rec.d_next = linf_distance(xnext, xbar);
  rec.max_state_norm = xnext.sup_norm();
  return IntervalOutput{std::move(xnext), std::move(unext), rec};
}

// ---------------------------------------------------------------------------
// Top-level driver.

namespace detail {

/// max over node pairs of |x_j - x_i| - omega(t_j - t_i); stops a row once the
/// envelope exceeds any possible state difference.
inline double envelope_oscillation_excess(const Trajectory& x, const ModulusTable& omega) {
  const double cap = 2.0 * x.sup_norm();
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double om = omega(x.time(j) - x.time(i));
      worst = std::max(worst, (x.state(j) - x.state(i)).norm() - om);
      if (om > cap) break;
    }
  }
  return worst;
}

/// Upper bound on |J(ubar) - J(u_eps)| from the interval splitting, at G = g~^{N0}(rho_bar_eps).
inline double l2_theoretical_bound(const RepairConstants& c, const HypothesisBundle& b, const ControlSignal& ubar,
                                   const DynamicsModel& model) {
  if (c.rho_bar_eps == 0.0) return 0.0;
  const GrowthMaps gm{&c};
  const double G = gm.compose(c.rho_bar_eps, c.N0);
  const double dN = gm.d_tilde_n(c.rho_bar_eps, c.N0);
  if (!std::isfinite(G)) return std::numeric_limits<double>::infinity();
  const double alpha = b.alpha.value_or(1.0);
  // k_u norms by the midpoint rule; the declared gain may be singular at nodes.
  double ku1 = 0.0, ku2 = 0.0;
  for (std::size_t i = 0; i + 1 < b.grid.size(); ++i) {
    const double s = 0.5 * (b.grid[i] + b.grid[i + 1]);
    const double h = b.grid[i + 1] - b.grid[i];
    double v;
    if (model.declared.ku) {
      v = model.declared.ku(s, b.M_u, ubar(s).norm());
    } else {
      v = 0.5 * (b.ku.empty() ? 0.0 : b.ku[i] + b.ku[i + 1]);
    }
    ku1 += v * h;
    ku2 += v * v * h;
  }
  const double mu2 = c.mu_bar * c.mu_bar;
  double head = 0.0;
  for (std::size_t i = 1; i < c.partition.size(); ++i) {
    const double a = std::max(c.partition[i] - G, 0.0);
    // integral of |ubar|^2 over [t_{i+1} - G, t_{i+1}]
    const auto& g = ubar.grid();
    for (std::size_t j = 0; j + 1 < g.size(); ++j) {
      const double lo = std::max(g[j], a), hi = std::min(g[j + 1], c.partition[i]);
      if (hi > lo) head += ubar.values()[j].squaredNorm() * (hi - lo);
    }
  }
  const double kga = std::pow(c.k * G, alpha);
  return mu2 * head + mu2 * kga * (2.0 * b.M_u * ku1 + ku2) + 2.0 * mu2 * kga * std::sqrt(ku2) * c.ubar_l2 +
         c.omega_R(G) * c.ubar_l2 * c.ubar_l2 + c.k * dN * b.M_u * b.M_u * mu2;
}

}  // namespace detail

/// Runs the construction for one eps. Throws on stage failures.
inline void run_construction(RepairResult& res, const HypothesisBundle& b, const ConstraintField& field,
                             const DynamicsModel& model, const Trajectory& xbar, const ControlSignal& ubar,
                             const WeightFn& weight, double lambda, const RepairOptions& opt) {
  RepairConstants& c = res.constants;
  RepairReport& rep = res.report;
  const GrowthMaps gm{&c};
  const auto gamma_cum = detail::cumulative_trapezoid(b.grid, b.gamma);
  rep.iterations.clear();
  rep.rho.clear();
  rep.d.assign(1, 0.0);
  rep.rho_hat_exceedances = 0;
  rep.envelope_violations = rep.oscillation_violations = rep.cone_violations = rep.delayed_gap_violations = 0;
  rep.cone_max_excess = rep.delayed_gap_max_excess = -std::numeric_limits<double>::infinity();
  rep.case_tolerance = opt.integrator.tolerance + c.omega_bar(c.step);

  Trajectory x = res.xbar;
  ControlSignal u = ubar.refined(c.partition);
  // Quantities of the current iterate, refreshed only when it changes.
  std::vector<double> suffix;
  double d_cur = 0.0, sup_cur = 0.0;
  auto refresh = [&] {
    suffix = violation_profile(field, c.eps, x);
    for (std::size_t j = suffix.size(); j-- > 1;) suffix[j - 1] = std::max(suffix[j - 1], suffix[j]);
    d_cur = linf_distance(x, res.xbar);
    sup_cur = x.sup_norm();
  };
  refresh();
  for (int i = 0; i < c.N0; ++i) {
    std::size_t j0 = x.grid().locate(c.partition[static_cast<std::size_t>(i)]);
    if (x.time(j0) < c.partition[static_cast<std::size_t>(i)] - kTimeTol) ++j0;
    IntervalInput in{&x, &u, i, c.eps, suffix[j0], d_cur, sup_cur};
    auto out = repair_interval(in, c, b, field, model, res.xbar, opt, gamma_cum);
    auto& r = out.record;
    rep.rho.push_back(r.rho);
    if (r.rho > c.rho_hat) ++rep.rho_hat_exceedances;
    if (r.which == IntervalCase::burst) {
      if (r.max_state_norm > c.R - 1.0) ++rep.envelope_violations;
      r.oscillation_excess = detail::envelope_oscillation_excess(*out.x, c.omega_bar);
      if (r.oscillation_excess > 0.0) ++rep.oscillation_violations;
      if (r.cone_excess > rep.case_tolerance) ++rep.cone_violations;
      if (r.delayed_gap_excess > rep.case_tolerance) ++rep.delayed_gap_violations;
      rep.cone_max_excess = std::max(rep.cone_max_excess, r.cone_excess);
      rep.delayed_gap_max_excess = std::max(rep.delayed_gap_max_excess, r.delayed_gap_excess);
    } else if (i == 0) {
      if (r.max_state_norm > c.R - 1.0) ++rep.envelope_violations;
      r.oscillation_excess = detail::envelope_oscillation_excess(x, c.omega_bar);
      if (r.oscillation_excess > 0.0) ++rep.oscillation_violations;
    }
    rep.d.push_back(r.d_next);
    rep.iterations.push_back(std::move(r));
    if (out.x) {
      x = std::move(*out.x);
      u = std::move(*out.u);
      refresh();
    }
  }
  rep.rho.push_back(violation_sup(field, c.eps, x, c.partition.back(), c.partition.back()));
  rep.recursion_rho_violations = 0;
  for (std::size_t i = 0; i + 1 < rep.rho.size(); ++i) {
    if (!(rep.rho[i + 1] <= gm.g_tilde(rep.rho[i]))) ++rep.recursion_rho_violations;
  }
  rep.d_tilde = gm.d_tilde(c.rho_bar_eps, c.N0);
  rep.recursion_d_holds = rep.d.back() <= (c.N0 > 0 ? rep.d_tilde.back() : 0.0);

  // Without a burst the construction never leaves x_0 = xbar, u_0 = ubar.
  const bool any_burst = std::any_of(rep.iterations.begin(), rep.iterations.end(),
                                     [](const IterationRecord& r) { return r.which == IntervalCase::burst; });
  if (!any_burst) {
    x = xbar;
    u = ubar;
  }
  const ClosenessMetrics m = closeness_metrics(field, c.eps, x, u, xbar, ubar, weight);
  rep.margin = m.margin;
  rep.linf_gap = m.linf_gap;
  rep.cost_reference = m.cost_reference;
  rep.cost_repaired = m.cost_repaired;
  rep.cost_gap = m.cost_gap;
  rep.l2_theoretical_bound = detail::l2_theoretical_bound(c, b, ubar, model);
  rep.margin_ok = rep.margin > 0.0;
  rep.linf_ok = rep.linf_gap <= lambda;
  rep.cost_ok = rep.cost_gap <= lambda;
  res.x = std::move(x);
  res.u = std::move(u);
}

/// Builds (x_eps, u_eps) with x_eps strictly inside A_eps, |xbar - x_eps|_inf <= lambda
/// and |J(ubar) - J(u_eps)| <= lambda. Stage failures are recorded, not thrown.
inline RepairResult repair(const Trajectory& xbar, const ControlSignal& ubar, double lambda,
                           const HypothesisBundle& b, const ConstraintField& field, const DynamicsModel& model,
                           const WeightFn& weight, const RepairOptions& opt = {}) {
  RepairResult res;
  auto fail = [&](const std::string& stage, const Error& e) {
    res.ok = false;
    res.failure_stage = stage;
    res.failure = e;
    return res;
  };
  if (!(lambda > 0.0)) return fail("input", Error(ErrorKind::domain, "lambda must be positive"));
  try {
    b.require_complete();
  } catch (const Error& e) {
    return fail("bundle", e);
  }
  const Vec x0 = xbar.state(0);
  if (!(field.margin(0.0, xbar.time(0), x0) > 0.0)) {
    return fail("initial-condition",
                Error(ErrorKind::schedule, "initial-condition: h(0, xbar(0)) < 0 is required",
                      detail::describe(xbar.time(0), x0)));
  }
  try {
    res.constants = schedule_base(b, xbar, ubar, weight, opt.schedule);
  } catch (const Error& e) {
    return fail("schedule", e);
  }
  RepairConstants base = res.constants;
  // The reference as an f-trajectory on the repair grid.
  try {
    IntegratorConfig ic = opt.integrator;
    ic.richardson_check = false;
    res.xbar = integrate(model, ubar.refined(base.partition), x0, xbar.grid().t0(), xbar.grid().t1(), ic);
    res.report.reference_consistency = linf_distance(res.xbar, xbar);
  } catch (const Error& e) {
    return fail("reference", e);
  }

  std::string last_reason = "no eps tried";
  std::optional<Error> last_error;
  double eps = eps_for_lambda(b, lambda);
  for (int j = 0; j <= opt.max_halvings && eps >= opt.eps_min; ++j, eps *= 0.5) {
    res.constants = base;
    res.constants.eps = eps;
    res.report.eps_tried.push_back(eps);
    if (!(field.margin(eps, xbar.time(0), x0) > 0.0)) {
      last_reason = "eps=" + format_double(eps) + ": xbar(0) not strictly inside A_eps";
      res.report.eps_rejections.push_back(last_reason);
      continue;
    }
    res.constants.rho_bar_eps = violation_sup(field, eps, res.xbar, 0.0, base.partition.back());
    const std::string violated = violated_eps_condition(res.constants, lambda);
    if (!violated.empty() && !opt.fallback) {
      last_reason = "eps=" + format_double(eps) + ": " + violated;
      res.report.eps_rejections.push_back(last_reason);
      continue;
    }
    try {
      run_construction(res, b, field, model, xbar, ubar, weight, lambda, opt);
    } catch (const Error& e) {
      last_reason = "eps=" + format_double(eps) + ": " + e.what();
      last_error = e;
      res.report.eps_rejections.push_back(last_reason);
      continue;
    }
    if (res.report.passed()) {
      res.report.mode = violated.empty() ? "certified" : "a_posteriori";
      res.report.eps_condition_violated = violated;
      res.ok = true;
      return res;
    }
    std::ostringstream why;
    why << "eps=" << format_double(eps) << ": margin=" << res.report.margin << " linf=" << res.report.linf_gap
        << " cost=" << res.report.cost_gap;
    last_reason = why.str();
    res.report.eps_rejections.push_back(last_reason);
  }
  res.x = Trajectory();
  res.u = ControlSignal();
  return fail("eps-search", Error(ErrorKind::schedule, "eps-infeasible: no tightening passes", last_reason));
}

}  // namespace tightening
