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
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tightening/errors.hpp"
#include "tightening/expr.hpp"
#include "tightening/signals.hpp"

namespace tightening {

/// Constants a model knows in closed form. Empty members are certified by sampling.
struct DeclaredConstants {
  std::function<double(double)> theta;  // sublinear growth envelope
  std::function<double(double)> kf;     // Lipschitz modulus in x
  std::function<double(double)> gamma;  // time-regularity density
  /// Exact integral of gamma over [s, t]; falls back to quadrature of `gamma`.
  std::function<double(double, double)> gamma_integral;
  std::optional<double> alpha;
  /// Hoelder selection gain k_u(s) given M_u and |ubar(s)|.
  std::function<double(double s, double m_u, double ubar_norm)> ku;
};

/// x' = f(t, x, u) with optional closed-form control re-selection.
struct DynamicsModel {
  using Rhs = std::function<Vec(double, const Vec&, const Vec&)>;
  /// (s, t, x, u_s) -> u_t
  using ShiftHook = std::function<Vec(double, double, const Vec&, const Vec&)>;

  std::string name;
  int state_dim = 0;
  int control_dim = 0;
  Rhs rhs;
  ShiftHook shift_hook;
  DeclaredConstants declared;
  /// Times the integrator must land on (dynamics kinks).
  std::vector<double> breakpoints;
  /// Right-sided singularities of f in t: the integrator grades its nodes
  /// geometrically from `at + start` until the base step is reached.
  struct Singularity {
    double at = 0.0;
    double start = 0.0;
  };
  std::vector<Singularity> singularities;

  Vec eval(double t, const Vec& x, const Vec& u) const {
    if (x.size() != state_dim || u.size() != control_dim) {
      throw Error(ErrorKind::shape, name + ": state/control dimension mismatch");
    }
    Vec v = rhs(t, x, u);
    if (v.size() != state_dim || !v.allFinite()) {
      std::ostringstream w;
      w << "t=" << t << " x=" << x.transpose() << " u=" << u.transpose();
      throw Error(ErrorKind::model, name + ": non-finite right-hand side", w.str());
    }
    return v;
  }
};

inline Vec eval_rhs(const DynamicsModel& model, double t, const Vec& x, const Vec& u) { return model.eval(t, x, u); }

// ---------------------------------------------------------------------------
// Electric motor x' = a(t, x) + b(t, u), incident at t = 1.

struct MotorParams {
  /// Drift a(t, x1); defaults to 0.2 cos(x1).
  std::string drift = "0.2*cos(x1)";
  /// Sup bound of |a| used in the declared growth envelope.
  double drift_bound = 0.2;
  /// The surge gain (t-1)^{-1/4} is evaluated at max(t-1, singular_floor).
  double singular_floor = 5e-4;
  /// Decline: gamma(s) = gamma_scale / (4 sqrt(s-1)). pi/2 bounds |arctan|.
  double gamma_scale = 1.5707963267948966;
};

namespace detail {

inline std::function<double(double, double)> compile_drift(const std::string& src) {
  auto e = std::make_shared<Expression>(src, state_control_variables(1, 0));
  return [e](double t, double x) {
    const double vars[2] = {t, x};
    return e->eval(vars);
  };
}

}  // namespace detail

inline DynamicsModel make_motor_surge(const MotorParams& p = {}) {
  auto drift = detail::compile_drift(p.drift);
  const double floor = p.singular_floor;
  auto gain = [floor](double t) { return t <= 1.0 ? 1.0 : std::pow(std::max(t - 1.0, floor), -0.25); };

  DynamicsModel m;
  m.name = "motor_surge";
  m.state_dim = 1;
  m.control_dim = 1;
  m.rhs = [drift, gain](double t, const Vec& x, const Vec& u) {
    Vec v(1);
    v[0] = drift(t, x[0]) + gain(t) * u[0];
    return v;
  };
  // Keeps b(t, u_t) = b(s, u_s): u_t = u_s for s < t <= 1, (t-1)^{1/4} u_s across
  // the incident, ((t-1)/(s-1))^{1/4} u_s after it.
  m.shift_hook = [gain](double s, double t, const Vec&, const Vec& us) -> Vec { return us * (gain(s) / gain(t)); };
  const double bound = p.drift_bound;
  m.declared.theta = [gain, bound](double t) { return gain(t) + bound; };
  m.declared.gamma = [](double) { return 0.0; };
  m.declared.gamma_integral = [](double, double) { return 0.0; };
  m.declared.alpha = 0.25;
  m.declared.ku = [](double s, double m_u, double ubar) {
    const double d = std::abs(1.0 - s);
    if (d == 0.0) return std::numeric_limits<double>::infinity();
    return (m_u + ubar) / std::pow(d, 0.25);
  };
  m.breakpoints = {1.0, 1.0 + floor};
  m.singularities = {{1.0, floor}};
  return m;
}

inline DynamicsModel make_motor_decline(const MotorParams& p = {}) {
  auto drift = detail::compile_drift(p.drift);
  auto gain = [](double t) { return t <= 1.0 ? 1.0 : 1.0 - std::sqrt(t - 1.0) / 2.0; };

  DynamicsModel m;
  m.name = "motor_decline";
  m.state_dim = 1;
  m.control_dim = 1;
  m.rhs = [drift, gain](double t, const Vec& x, const Vec& u) {
    Vec v(1);
    v[0] = drift(t, x[0]) + gain(t) * std::atan(u[0]);
    return v;
  };
  m.shift_hook = [](double, double, const Vec&, const Vec& us) -> Vec { return us; };
  const double bound = p.drift_bound;
  const double scale = p.gamma_scale;
  const double floor = p.singular_floor;
  m.declared.theta = [gain, bound](double t) { return gain(t) + bound; };
  m.declared.gamma = [scale, floor](double s) {
    return s <= 1.0 ? 0.0 : scale / (4.0 * std::sqrt(std::max(s - 1.0, floor)));
  };
  m.declared.gamma_integral = [scale](double s, double t) {
    const double a = std::sqrt(std::max(s - 1.0, 0.0));
    const double b = std::sqrt(std::max(t - 1.0, 0.0));
    return scale * (b - a) / 2.0;
  };
  m.declared.alpha = 1.0;
  m.declared.ku = [](double, double, double) { return 0.0; };
  m.breakpoints = {1.0};
  // sqrt(t - 1) has an unbounded derivative at the incident.
  m.singularities = {{1.0, 1e-9}};
  return m;
}

/// x' = a(t, x) + B(t, x) u with expression entries over t, x1..xN.
inline DynamicsModel make_control_affine(const std::vector<std::string>& drift,
                                         const std::vector<std::vector<std::string>>& input) {
  const int n = static_cast<int>(drift.size());
  if (n == 0 || static_cast<int>(input.size()) != n || input.front().empty()) {
    throw Error(ErrorKind::shape, "control_affine needs N drift entries and an N x M input matrix");
  }
  const int m = static_cast<int>(input.front().size());
  const auto names = state_control_variables(n, 0);
  auto a = std::make_shared<std::vector<Expression>>();
  auto b = std::make_shared<std::vector<Expression>>();
  for (const auto& s : drift) a->emplace_back(s, names);
  for (const auto& row : input) {
    if (static_cast<int>(row.size()) != m) throw Error(ErrorKind::shape, "ragged input matrix");
    for (const auto& s : row) b->emplace_back(s, names);
  }

  DynamicsModel model;
  model.name = "control_affine";
  model.state_dim = n;
  model.control_dim = m;
  model.rhs = [a, b, n, m](double t, const Vec& x, const Vec& u) {
    std::vector<double> vars(static_cast<std::size_t>(n) + 1);
    vars[0] = t;
    for (int i = 0; i < n; ++i) vars[static_cast<std::size_t>(i) + 1] = x[i];
    Vec v(n);
    for (int i = 0; i < n; ++i) {
      double acc = (*a)[static_cast<std::size_t>(i)].eval(vars);
      for (int j = 0; j < m; ++j) acc += (*b)[static_cast<std::size_t>(i * m + j)].eval(vars) * u[j];
      v[i] = acc;
    }
    return v;
  };
  return model;
}

// ---------------------------------------------------------------------------
// Control re-selection u_s -> u_t keeping the dynamics' time variation small.

struct SelectionOptions {
  /// Search radius around u_s (the beta_u(s) ball) for the numeric fallback.
  double radius = 1.0;
  /// Allowed residual, the integral of gamma over [s, t]; negative disables the check.
  double budget = -1.0;
  double tolerance = 1e-9;
  /// Samples per control axis (the search uses samples^min(M, 2) points).
  int samples = 64;
};

struct Selection {
  Vec u;
  double residual = 0.0;
};

namespace detail {

inline double selection_residual(const DynamicsModel& model, double t, const Vec& x, const Vec& u, const Vec& target) {
  return (model.eval(t, x, u) - target).norm();
}

inline Vec numeric_selection(const DynamicsModel& model, double t, const Vec& x, const Vec& us, const Vec& target,
                             const SelectionOptions& opt) {
  const int m = model.control_dim;
  Vec best = us;
  double best_r = selection_residual(model, t, x, us, target);
  auto consider = [&](const Vec& cand) {
    if ((cand - us).norm() > opt.radius * (1.0 + 1e-12)) return;
    const double r = selection_residual(model, t, x, cand, target);
    if (r < best_r - 1e-15) {
      best_r = r;
      best = cand;
    }
  };
  if (best_r == 0.0 || opt.radius <= 0.0) return best;
  const int k = std::max(opt.samples, 2);
  if (m == 1) {
    for (int i = 0; i < k; ++i) {
      Vec c = us;
      c[0] += opt.radius * (-1.0 + 2.0 * i / (k - 1));
      consider(c);
    }
  } else {
    // Grid over the first two axes; higher axes are searched by the refinement below.
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        Vec c = us;
        c[0] += opt.radius * (-1.0 + 2.0 * i / (k - 1));
        c[1] += opt.radius * (-1.0 + 2.0 * j / (k - 1));
        consider(c);
      }
    }
  }
  // Coordinate pattern search.
  double h = opt.radius / k;
  for (int iter = 0; iter < 40 && h > 1e-14; ++iter) {
    bool improved = false;
    for (int d = 0; d < m; ++d) {
      for (double sgn : {-1.0, 1.0}) {
        Vec c = best;
        c[d] += sgn * h;
        const double before = best_r;
        consider(c);
        improved = improved || best_r < before;
      }
    }
    if (!improved) h *= 0.5;
  }
  return best;
}

}  // namespace detail

/// Returns u_t for the move (s, u_s) -> t. Uses the model's hook when it has
/// one, otherwise a sampled search of the `radius` ball around u_s.
inline Selection shift_selection(const DynamicsModel& model, double s, double t, const Vec& x, const Vec& us,
                                 const SelectionOptions& opt = {}) {
  if (t < s) throw Error(ErrorKind::domain, "shift selection needs s <= t");
  const Vec target = model.eval(s, x, us);
  Selection out;
  if (model.shift_hook) {
    out.u = model.shift_hook(s, t, x, us);
  } else {
    out.u = detail::numeric_selection(model, t, x, us, target, opt);
  }
  out.residual = detail::selection_residual(model, t, x, out.u, target);
  if (opt.budget >= 0.0 && out.residual > opt.budget + opt.tolerance) {
    std::ostringstream w;
    w << "s=" << s << " t=" << t << " x=" << x.transpose() << " u_s=" << us.transpose() << " residual=" << out.residual
      << " budget=" << opt.budget;
    throw Error(ErrorKind::selection_infeasible, "selection residual exceeds the time-regularity budget", w.str());
  }
  return out;
}

/// Integral of the declared gamma over [s, t] (0 when gamma is undeclared).
inline double gamma_integral(const DynamicsModel& model, double s, double t) {
  if (model.declared.gamma_integral) return model.declared.gamma_integral(s, t);
  if (!model.declared.gamma) return 0.0;
  constexpr int kPieces = 64;
  double acc = 0.0;
  const double h = (t - s) / kPieces;
  for (int i = 0; i < kPieces; ++i) {
    const double a = s + i * h;
    acc += h / 6.0 * (model.declared.gamma(a) + 4.0 * model.declared.gamma(a + h / 2) + model.declared.gamma(a + h));
  }
  return acc;
}

}  // namespace tightening
