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
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tightening/errors.hpp"
#include "tightening/expr.hpp"
#include "tightening/signals.hpp"

namespace tightening {

struct Box {
  Vec lower;
  Vec upper;

  static Box cube(int n, double radius) { return Box{Vec::Constant(n, -radius), Vec::Constant(n, radius)}; }
  double diameter() const { return (upper - lower).norm(); }
  Eigen::Index dim() const { return lower.size(); }
};

/// Distances to A_{eps,t} and to its boundary.
struct SetDistances {
  double to_set = 0.0;
  double to_boundary = 0.0;
};

/// h(t, x) <= 0 componentwise; A_{eps,t} = {x : eps + h_p(t, x) <= 0 for all p}.
struct ConstraintField {
  using Components = std::function<Vec(double, const Vec&)>;
  using AnalyticDistance = std::function<SetDistances(double, double, const Vec&)>;

  std::string name;
  int state_dim = 0;
  int components = 0;
  Components h;
  AnalyticDistance analytic;  // optional closed form
  Box sampling_box;
  /// Sampling resolution of the numeric distance; 0 means box diameter / 2048.
  double resolution = 0.0;
  /// Known point of A_{eps,t}; overrides empty-set detection when feasible.
  std::optional<Vec> witness;
  /// h does not depend on t, so every boundary distance is constant in time.
  bool time_invariant = false;

  double max_component(double eps, double t, const Vec& x) const { return eps + h(t, x).maxCoeff(); }
  bool feasible(double eps, double t, const Vec& x) const { return max_component(eps, t, x) <= 0.0; }
  /// Positive iff x is strictly inside A_{eps,t}.
  double margin(double eps, double t, const Vec& x) const { return -max_component(eps, t, x); }
  double grid_resolution() const {
    return resolution > 0.0 ? resolution : sampling_box.diameter() / 2048.0;
  }
};

// ---------------------------------------------------------------------------
// Builtin fields.

/// h(t, x) = 1 + rate * t - |x|: the complement of a (possibly growing) unit ball.
inline ConstraintField unit_ball_complement(int n, double box_radius, double rate = 0.0) {
  ConstraintField f;
  f.name = "unit_ball_complement";
  f.state_dim = n;
  f.components = 1;
  f.h = [rate](double t, const Vec& x) {
    Vec v(1);
    v[0] = 1.0 + rate * t - x.norm();
    return v;
  };
  f.analytic = [rate](double eps, double t, const Vec& x) {
    const double radius = 1.0 + rate * t + eps;
    const double r = x.norm();
    if (radius <= 0.0) return SetDistances{0.0, std::numeric_limits<double>::infinity()};
    return SetDistances{std::max(0.0, radius - r), std::abs(r - radius)};
  };
  f.sampling_box = Box::cube(n, box_radius);
  f.time_invariant = rate == 0.0;
  return f;
}

/// h(x) = c . x - b.
inline ConstraintField half_plane(const Vec& c, double b, const Box& box) {
  ConstraintField f;
  f.name = "half_plane";
  f.state_dim = static_cast<int>(c.size());
  f.components = 1;
  f.h = [c, b](double, const Vec& x) {
    Vec v(1);
    v[0] = c.dot(x) - b;
    return v;
  };
  const double cn = c.norm();
  f.analytic = [c, b, cn](double eps, double, const Vec& x) {
    const double signed_dist = (c.dot(x) - b + eps) / cn;
    return SetDistances{std::max(0.0, signed_dist), std::abs(signed_dist)};
  };
  f.sampling_box = box;
  f.time_invariant = true;
  return f;
}

/// Components given as expressions over t, x1..xN.
inline ConstraintField expression_field(const std::vector<std::string>& components, int n, const Box& box) {
  if (components.empty()) throw Error(ErrorKind::shape, "constraint needs at least one component");
  auto exprs = std::make_shared<std::vector<Expression>>();
  const auto names = state_control_variables(n, 0);
  for (const auto& s : components) exprs->emplace_back(s, names);
  ConstraintField f;
  f.name = "expression";
  f.state_dim = n;
  f.components = static_cast<int>(components.size());
  f.h = [exprs, n](double t, const Vec& x) {
    std::vector<double> vars(static_cast<std::size_t>(n) + 1);
    vars[0] = t;
    for (int i = 0; i < n; ++i) vars[static_cast<std::size_t>(i) + 1] = x[i];
    Vec v(static_cast<Eigen::Index>(exprs->size()));
    for (std::size_t p = 0; p < exprs->size(); ++p) v[static_cast<Eigen::Index>(p)] = (*exprs)[p].eval(vars);
    return v;
  };
  f.sampling_box = box;
  f.time_invariant = std::none_of(exprs->begin(), exprs->end(), [](const Expression& e) { return e.uses(0); });
  return f;
}

// ---------------------------------------------------------------------------
// Numeric distances: nearest opposite-class sample on a regular lattice over the
// sampling box (Chebyshev shells around x), refined by bisection on the segment.

namespace detail {

/// Visits lattice offsets with max |o_i| == k.
template <class Visit>
void for_each_shell_offset(int n, int k, Visit&& visit) {
  std::vector<int> o(static_cast<std::size_t>(n), 0);
  if (k == 0) {
    visit(o);
    return;
  }
  for (int d = 0; d < n; ++d) {
    for (int sgn : {-1, 1}) {
      // axes < d in (-k, k); axis d = +-k; axes > d in [-k, k]
      std::vector<int> lo(static_cast<std::size_t>(n)), hi(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (i < d) { lo[ui] = -k + 1; hi[ui] = k - 1; }
        else if (i == d) { lo[ui] = hi[ui] = sgn * k; }
        else { lo[ui] = -k; hi[ui] = k; }
      }
      bool empty = false;
      for (int i = 0; i < n; ++i) empty = empty || lo[static_cast<std::size_t>(i)] > hi[static_cast<std::size_t>(i)];
      if (empty) continue;
      o = lo;
      while (true) {
        visit(o);
        int i = n - 1;
        while (i >= 0) {
          const auto ui = static_cast<std::size_t>(i);
          if (++o[ui] <= hi[ui]) break;
          o[ui] = lo[ui];
          --i;
        }
        if (i < 0) break;
      }
    }
  }
}

/// Crossing point of the segment [a, b], returned on b's side.
/// Invariant: in_a_class(a) && !in_a_class(b).
template <class Pred>
Vec bisect_flip(Vec a, Vec b, Pred&& in_a_class, int iters = 60) {
  for (int i = 0; i < iters; ++i) {
    Vec mid = 0.5 * (a + b);
    if (in_a_class(mid)) a = mid;
    else b = mid;
  }
  return b;
}

/// Euclidean distance from x to the nearest lattice point satisfying `want`,
/// refined to the class boundary along the segment. Infinity when none exists.
template <class Pred>
double lattice_distance(const ConstraintField& f, const Vec& x, Pred&& want) {
  const Box& box = f.sampling_box;
  const int n = static_cast<int>(box.dim());
  const double r = f.grid_resolution();
  std::vector<int> extent(static_cast<std::size_t>(n)), centre(static_cast<std::size_t>(n));
  double offset_inf = 0.0;
  int kmax = 0;
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    extent[ui] = static_cast<int>(std::floor((box.upper[i] - box.lower[i]) / r + 1e-9));
    centre[ui] = std::clamp(static_cast<int>(std::lround((x[i] - box.lower[i]) / r)), 0, extent[ui]);
    offset_inf = std::max(offset_inf, std::abs(x[i] - (box.lower[i] + centre[ui] * r)));
    kmax = std::max({kmax, centre[ui], extent[ui] - centre[ui]});
  }
  double best = std::numeric_limits<double>::infinity();
  Vec best_point;
  Vec p(n);
  for (int k = 0; k <= kmax; ++k) {
    if (k * r - offset_inf > best) break;
    for_each_shell_offset(n, k, [&](const std::vector<int>& o) {
      for (int i = 0; i < n; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        const int idx = centre[ui] + o[ui];
        if (idx < 0 || idx > extent[ui]) return;
        p[i] = box.lower[i] + idx * r;
      }
      const double d = (p - x).norm();
      if (d < best && want(p)) {
        best = d;
        best_point = p;
      }
    });
  }
  if (!std::isfinite(best)) return best;
  // The segment from x to the lattice point crosses the class boundary somewhere.
  const Vec q = bisect_flip(x, best_point, [&](const Vec& z) { return !want(z); });
  return std::min(best, (q - x).norm());
}

}  // namespace detail

/// Euclidean distance from x to A_{eps,t}; zero iff x is in the set.
inline double dist_to_set(const ConstraintField& f, double eps, double t, const Vec& x) {
  if (x.size() != f.state_dim) throw Error(ErrorKind::shape, "state dimension does not match constraint");
  if (f.analytic) return f.analytic(eps, t, x).to_set;
  if (f.feasible(eps, t, x)) return 0.0;
  double d = detail::lattice_distance(f, x, [&](const Vec& z) { return f.feasible(eps, t, z); });
  if (f.witness && f.feasible(eps, t, *f.witness)) d = std::min(d, (x - *f.witness).norm());
  if (!std::isfinite(d)) {
    std::ostringstream w;
    w << "eps=" << eps << " t=" << t;
    throw Error(ErrorKind::infeasible_tightening, "tightened set has no feasible sample in the sampling box", w.str());
  }
  return d;
}

/// Euclidean distance from x to the boundary of A_{eps,t}. Infinity when the
/// sampling box holds no point on the other side.
inline double dist_to_boundary(const ConstraintField& f, double eps, double t, const Vec& x) {
  if (x.size() != f.state_dim) throw Error(ErrorKind::shape, "state dimension does not match constraint");
  if (f.analytic) return f.analytic(eps, t, x).to_boundary;
  if (!f.feasible(eps, t, x)) return dist_to_set(f, eps, t, x);
  return detail::lattice_distance(f, x, [&](const Vec& z) { return !f.feasible(eps, t, z); });
}

/// Per-node distance to A_{eps,t}.
inline std::vector<double> violation_profile(const ConstraintField& f, double eps, const Trajectory& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = dist_to_set(f, eps, x.time(i), x.state(i));
  return out;
}

/// rho_{eps,[t0,t1]}: max over grid nodes in the window of the distance to A_{eps,t}.
inline double violation_sup(const ConstraintField& f, double eps, const Trajectory& x, double t0, double t1) {
  if (t0 < x.grid().t0() - kTimeTol || t1 > x.grid().t1() + kTimeTol || t1 < t0) {
    throw Error(ErrorKind::domain, "violation window outside the trajectory domain");
  }
  double best = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double t = x.time(i);
    if (t < t0 - kTimeTol || t > t1 + kTimeTol) continue;
    best = std::max(best, dist_to_set(f, eps, t, x.state(i)));
  }
  return best;
}

/// min over nodes of -(eps + max_p h_p(t, x(t))).
inline double interiority_margin(const ConstraintField& f, double eps, const Trajectory& x) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::min(m, f.margin(eps, x.time(i), x.state(i)));
  return m;
}

// ---------------------------------------------------------------------------
// Sampling of A_0 inside a ball, with boundary points added by bisection.

struct SampleOptions {
  int points = 401;      // lattice points per axis in 1-D, random points otherwise
  int boundary_pairs = 256;
  std::uint64_t seed = 7;
};

/// Points of the `radius` ball, plus points of the eps-boundary of A_{eps,t}
/// (feasible side) found by bisection between opposite-class samples.
inline std::vector<Vec> sample_ball_with_boundary(const ConstraintField& f, double eps, double t, double radius,
                                                  const SampleOptions& opt) {
  const int n = f.state_dim;
  std::vector<Vec> pts;
  if (n == 1) {
    for (int i = 0; i < opt.points; ++i) {
      Vec p(1);
      p[0] = radius * (-1.0 + 2.0 * i / (opt.points - 1));
      pts.push_back(p);
    }
    const std::size_t base = pts.size();
    for (std::size_t i = 0; i + 1 < base; ++i) {
      const bool a = f.feasible(eps, t, pts[i]);
      const bool b = f.feasible(eps, t, pts[i + 1]);
      if (a != b) {
        const Vec& in = a ? pts[i] : pts[i + 1];
        const Vec& out = a ? pts[i + 1] : pts[i];
        Vec lo = out, hi = in;
        for (int k = 0; k < 80; ++k) {
          Vec mid = 0.5 * (lo + hi);
          if (f.feasible(eps, t, mid)) hi = mid;
          else lo = mid;
        }
        pts.push_back(hi);
      }
    }
    return pts;
  }
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto draw = [&]() {
    Vec d(n);
    for (int i = 0; i < n; ++i) d[i] = gauss(rng);
    d.normalize();
    return Vec(d * radius * std::pow(unit(rng), 1.0 / n));
  };
  for (int i = 0; i < opt.points; ++i) pts.push_back(draw());
  for (int i = 0; i < opt.boundary_pairs; ++i) {
    const Vec a = draw();
    const Vec b = draw();
    const bool fa = f.feasible(eps, t, a);
    if (fa == f.feasible(eps, t, b)) continue;
    Vec lo = fa ? b : a, hi = fa ? a : b;
    for (int k = 0; k < 80; ++k) {
      Vec mid = 0.5 * (lo + hi);
      if (f.feasible(eps, t, mid)) hi = mid;
      else lo = mid;
    }
    pts.push_back(hi);
  }
  return pts;
}

// ---------------------------------------------------------------------------
// Regular perturbation: the largest eps <= eps0 moving every sampled point of
// A_0 by at most lambda.

struct PerturbationOptions {
  double eps0 = 0.25;
  double horizon = 1.0;  // T
  int time_samples = 21;
  int bisection_steps = 50;
  SampleOptions samples;
};

inline double certify_regular_perturbation(const ConstraintField& f, double lambda, double radius,
                                           const PerturbationOptions& opt) {
  if (!(lambda > 0.0)) throw Error(ErrorKind::domain, "lambda must be positive");
  struct Probe {
    double t;
    Vec x;
  };
  std::vector<Probe> probes;
  for (int j = 0; j < opt.time_samples; ++j) {
    const double t = opt.time_samples == 1 ? 0.0 : opt.horizon * j / (opt.time_samples - 1);
    for (auto& x : sample_ball_with_boundary(f, 0.0, t, radius, opt.samples)) {
      if (f.feasible(0.0, t, x)) probes.push_back({t, std::move(x)});
    }
  }
  if (probes.empty()) throw Error(ErrorKind::certification, "A_0 has no sample inside the ball");

  std::string worst;
  auto passes = [&](double eps) {
    double max_d = 0.0;
    for (const auto& p : probes) {
      double d = 0.0;
      try {
        d = dist_to_set(f, eps, p.t, p.x);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::infeasible_tightening) throw;
        worst = "eps=" + format_double(eps) + " t=" + format_double(p.t) + " (empty tightened set)";
        return false;
      }
      if (d > max_d) {
        max_d = d;
        if (d > lambda) {
          std::ostringstream w;
          w << "eps=" << eps << " t=" << p.t << " x=" << p.x.transpose() << " distance=" << d;
          worst = w.str();
          return false;
        }
      }
    }
    return true;
  };

  if (passes(opt.eps0)) return opt.eps0;
  double lo = opt.eps0 * std::ldexp(1.0, -30);
  if (!passes(lo)) {
    throw Error(ErrorKind::certification, "no tightening in (0, eps0] keeps A_0 within lambda", worst);
  }
  double hi = opt.eps0;
  for (int i = 0; i < opt.bisection_steps; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (passes(mid)) lo = mid;
    else hi = mid;
  }
  return lo;
}

// ---------------------------------------------------------------------------
// Right-continuity of the boundary distance in t.

struct BoundaryModulusOptions {
  double horizon = 1.0;  // T
  int time_samples = 41;
  int widths = 32;       // tabulated widths in (0, delta0]
  SampleOptions samples;
};

inline ModulusTable build_boundary_modulus(const ConstraintField& f, const std::vector<double>& eps_list, double radius,
                                           double delta0, const BoundaryModulusOptions& opt) {
  const int kw = std::max(opt.widths, 1);
  std::vector<double> deltas(static_cast<std::size_t>(kw) + 1), vals(static_cast<std::size_t>(kw) + 1, 0.0);
  for (int k = 0; k <= kw; ++k) deltas[static_cast<std::size_t>(k)] = delta0 * k / kw;
  if (f.time_invariant) return ModulusTable(std::move(deltas), std::move(vals), delta0 / kw);
  for (double eps : eps_list) {
    for (int j = 0; j < opt.time_samples; ++j) {
      const double t = opt.time_samples == 1 ? 0.0 : opt.horizon * j / (opt.time_samples - 1);
      for (const auto& x : sample_ball_with_boundary(f, 0.0, t, radius, opt.samples)) {
        if (!f.feasible(0.0, t, x)) continue;
        const double d0 = dist_to_boundary(f, eps, t, x);
        if (!std::isfinite(d0)) continue;
        for (int k = 1; k <= kw; ++k) {
          const double td = t + deltas[static_cast<std::size_t>(k)];
          if (td > opt.horizon + kTimeTol) break;
          const double d1 = dist_to_boundary(f, eps, std::min(td, opt.horizon), x);
          if (!std::isfinite(d1)) continue;
          auto& v = vals[static_cast<std::size_t>(k)];
          v = std::max(v, std::abs(d1 - d0));
        }
      }
    }
  }
  for (std::size_t k = 1; k < vals.size(); ++k) vals[k] = std::max(vals[k], vals[k - 1]);
  vals[0] = 0.0;
  return ModulusTable(std::move(deltas), std::move(vals), delta0 / kw);
}

}  // namespace tightening
