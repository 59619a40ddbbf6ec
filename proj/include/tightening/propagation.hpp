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
#include <sstream>
#include <utility>
#include <vector>

#include "tightening/dynamics.hpp"
#include "tightening/errors.hpp"
#include "tightening/signals.hpp"

namespace tightening {

struct IntegratorConfig {
  /// Base step; nodes sit at multiples of `step` plus every control node and
  /// model breakpoint inside the window, so no RK4 step straddles a jump.
  double step = 1e-3;
  bool richardson_check = false;
  /// Bound on the Richardson error estimate when the check is on.
  double tolerance = 1e-6;
};

/// Integration nodes for [t0, t1].
inline TimeGrid integration_grid(const DynamicsModel& model, const ControlSignal& u, double t0, double t1,
                                 double step) {
  if (!(t1 > t0)) throw Error(ErrorKind::domain, "integration window must have t1 > t0");
  if (!(step > 0.0)) throw Error(ErrorKind::domain, "integration step must be positive");
  std::vector<double> nodes{t0};
  const auto k0 = static_cast<long long>(std::floor(t0 / step)) + 1;
  for (long long k = k0;; ++k) {
    const double t = static_cast<double>(k) * step;
    if (t >= t1 - kTimeTol) break;
    if (t > t0 + kTimeTol) nodes.push_back(t);
  }
  nodes.push_back(t1);
  TimeGrid g(std::move(nodes), step * (1.0 + 1e-9));
  std::vector<double> extra;
  for (double t : u.grid().nodes()) {
    if (t > t0 && t < t1) extra.push_back(t);
  }
  for (double t : model.breakpoints) {
    if (t > t0 && t < t1) extra.push_back(t);
  }
  // Cells of width a/4 at distance a from a singular time keep RK4 accurate
  // for integrands like (t - s)^{-1/4} or sqrt(t - s).
  for (const auto& sing : model.singularities) {
    for (double a = sing.start; 0.25 * a < step; a *= 1.25) {
      const double t = sing.at + a;
      if (t > t0 && t < t1) extra.push_back(t);
    }
  }
  return extra.empty() ? g : g.merged(extra);
}

namespace detail {

/// The first stage uses the right limit at t so a cell starting on a jump of
/// f in time sees the cell's own branch.
inline Vec rk4_step(const DynamicsModel& model, double t, double h, const Vec& x, const Vec& u) {
  const Vec k1 = model.eval(std::nextafter(t, t + h), x, u);
  const Vec k2 = model.eval(t + 0.5 * h, x + 0.5 * h * k1, u);
  const Vec k3 = model.eval(t + 0.5 * h, x + 0.5 * h * k2, u);
  const Vec k4 = model.eval(t + h, x + h * k3, u);
  return x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/// RK4 over the given nodes; the control is frozen at u(t_j) on [t_j, t_{j+1}].
inline std::vector<Vec> rk4_on_nodes(const DynamicsModel& model, const ControlSignal& u, const Vec& x0,
                                     const std::vector<double>& nodes, int substeps) {
  std::vector<Vec> xs;
  xs.reserve(nodes.size());
  xs.push_back(x0);
  Vec x = x0;
  for (std::size_t j = 0; j + 1 < nodes.size(); ++j) {
    const double a = nodes[j];
    const double h = (nodes[j + 1] - a) / substeps;
    const Vec& uj = u(a);
    try {
      for (int s = 0; s < substeps; ++s) x = rk4_step(model, a + s * h, h, x, uj);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::model) throw;
      std::ostringstream w;
      w << "node " << j << " t=" << a << "; " << e.witness();
      throw Error(ErrorKind::propagation, "trajectory left the finite range", w.str());
    }
    if (!x.allFinite()) {
      std::ostringstream w;
      w << "node " << j + 1 << " t=" << nodes[j + 1];
      throw Error(ErrorKind::propagation, "non-finite state", w.str());
    }
    xs.push_back(x);
  }
  return xs;
}

}  // namespace detail

/// Max over nodes of |x_h - x_{h/2}| * 16/15: the leading-order RK4 error of x_h.
inline double richardson_estimate(const DynamicsModel& model, const ControlSignal& u, const Vec& x0,
                                  const TimeGrid& grid) {
  const auto coarse = detail::rk4_on_nodes(model, u, x0, grid.nodes(), 1);
  const auto fine = detail::rk4_on_nodes(model, u, x0, grid.nodes(), 2);
  double m = 0.0;
  for (std::size_t i = 0; i < coarse.size(); ++i) m = std::max(m, (coarse[i] - fine[i]).norm());
  return m * 16.0 / 15.0;
}

/// Fixed-step RK4 f-trajectory on [t0, t1] from x0.
inline Trajectory integrate(const DynamicsModel& model, const ControlSignal& u, const Vec& x0, double t0, double t1,
                            const IntegratorConfig& cfg) {
  if (x0.size() != model.state_dim) throw Error(ErrorKind::shape, "initial state dimension mismatch");
  if (!x0.allFinite()) throw Error(ErrorKind::domain, "initial state must be finite");
  if (!u.grid().contains(t0) || !u.grid().contains(t1)) {
    throw Error(ErrorKind::domain, "integration window outside the control domain");
  }
  TimeGrid g = integration_grid(model, u, t0, t1, cfg.step);
  auto xs = detail::rk4_on_nodes(model, u, x0, g.nodes(), 1);
  if (cfg.richardson_check) {
    const double est = richardson_estimate(model, u, x0, g);
    if (est > cfg.tolerance) {
      std::ostringstream w;
      w << "estimate=" << est << " tolerance=" << cfg.tolerance;
      throw Error(ErrorKind::accuracy, "step-halving disagreement exceeds tolerance", w.str());
    }
  }
  return Trajectory(std::move(g), std::move(xs));
}

/// A-priori radius R = e^{|theta|_1} [1 + |xbar|_inf + (1 + M_u)|theta|_1
///                                     + |theta|_2 (|ubar|_2 + |beta_u|_2)].
inline double gronwall_radius(double theta_l1, double theta_l2, double xbar_linf, double m_u, double ubar_l2,
                              double betau_l2) {
  return std::exp(theta_l1) *
         (1.0 + xbar_linf + (1.0 + m_u) * theta_l1 + theta_l2 * (ubar_l2 + betau_l2));
}

struct GapCheck {
  double observed = 0.0;
  double bound = 0.0;
  bool holds() const { return observed <= bound; }
};

/// Two trajectories under one control: observed sup gap and |xa0 - xb0| e^{omega_f(T)}.
inline GapCheck filippov_gap(const DynamicsModel& model, const ControlSignal& u, const Vec& xa0, const Vec& xb0,
                             double t0, double t1, double omega_f_T, const IntegratorConfig& cfg) {
  const Trajectory a = integrate(model, u, xa0, t0, t1, cfg);
  const Trajectory b = integrate(model, u, xb0, t0, t1, cfg);
  return GapCheck{linf_distance(a, b), (xa0 - xb0).norm() * std::exp(omega_f_T)};
}

/// max over node pairs with t_j - t_i <= max_delta of |x_j - x_i| - omega(t_j - t_i).
/// Nonpositive iff the trajectory's oscillation stays under the envelope.
inline double oscillation_excess(const Trajectory& x, const ModulusTable& omega, double max_delta) {
  double worst = -std::numeric_limits<double>::infinity();
  const auto& g = x.grid();
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double w = g[j] - g[i];
      if (w > max_delta + kTimeTol) break;
      worst = std::max(worst, (x.state(j) - x.state(i)).norm() - omega(w));
    }
  }
  return x.size() < 2 ? 0.0 : worst;
}

}  // namespace tightening
