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
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tightening/dynamics.hpp"
#include "tightening/errors.hpp"
#include "tightening/geometry.hpp"
#include "tightening/propagation.hpp"
#include "tightening/signals.hpp"

namespace tightening {

enum class Provenance { declared, certified, declared_only };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::declared: return "declared";
    case Provenance::certified: return "certified";
    case Provenance::declared_only: return "declared-only";
  }
  return "?";
}

/// Constants of the standing hypotheses, sampled on `grid`.
struct HypothesisBundle {
  TimeGrid grid;
  std::vector<double> theta;   // growth envelope
  std::vector<double> kf;      // Lipschitz modulus in x
  std::vector<double> gamma;   // time-regularity density
  std::vector<double> beta_u;  // re-selection radius
  std::vector<double> ku;      // Hoelder gain (+inf where undefined)
  std::optional<double> alpha;
  double M_u = std::numeric_limits<double>::quiet_NaN();
  double M_v = std::numeric_limits<double>::quiet_NaN();
  double xi = std::numeric_limits<double>::quiet_NaN();
  double eta = std::numeric_limits<double>::quiet_NaN();
  double eps0 = std::numeric_limits<double>::quiet_NaN();
  double delta0 = std::numeric_limits<double>::quiet_NaN();
  ModulusTable omega_A;
  std::vector<double> eps_list;
  /// (lambda, largest certified eps) pairs, lambda decreasing.
  std::vector<std::pair<double, double>> lambda_to_eps;
  /// |xbar|_inf the bundle was certified against, and the operating box radius.
  double xbar_linf = 0.0;
  double box_radius = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, Provenance> provenance;
  std::map<std::string, std::string> witnesses;
  std::map<std::string, long long> sample_counts;

  bool partial() const {
    return std::any_of(provenance.begin(), provenance.end(),
                       [](const auto& kv) { return kv.second == Provenance::declared_only; });
  }

  /// Throws a validation error naming the first missing constant.
  void require_complete() const {
    auto need = [](bool ok, const char* name) {
      if (!ok) throw Error(ErrorKind::validation, std::string("hypothesis bundle lacks ") + name);
    };
    const std::size_t n = grid.size();
    need(n >= 2, "time grid");
    need(theta.size() == n, "theta");
    need(kf.size() == n, "kf");
    need(gamma.size() == n, "gamma");
    need(beta_u.size() == n, "beta_u");
    for (const char* c : {"M_u", "M_v", "xi", "eta", "eps0", "delta0"}) {
      const std::string s = c;
      const double v = s == "M_u" ? M_u : s == "M_v" ? M_v : s == "xi" ? xi : s == "eta" ? eta : s == "eps0" ? eps0 : delta0;
      need(std::isfinite(v) && v >= 0.0, c);
    }
    need(xi > 0.0, "xi > 0");
    need(eta > 0.0, "eta > 0");
    need(eps0 > 0.0, "eps0 > 0");
    need(delta0 > 0.0, "delta0 > 0");
  }
};

// ---------------------------------------------------------------------------
// Sampling helpers.

namespace detail {

inline Vec random_in_ball(std::mt19937_64& rng, int n, double radius) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec d(n);
  for (int i = 0; i < n; ++i) d[i] = gauss(rng);
  const double nd = d.norm();
  if (nd == 0.0) return Vec::Zero(n);
  return d / nd * radius * std::pow(unit(rng), 1.0 / n);
}

inline Vec random_unit(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec d(n);
  do {
    for (int i = 0; i < n; ++i) d[i] = gauss(rng);
  } while (d.norm() == 0.0);
  return d.normalized();
}

/// Deterministic points of the closed `radius` ball: a lattice in 1-D and 2-D
/// (per-axis `per_axis` points, disk-filtered), axes plus random points beyond.
inline std::vector<Vec> ball_points(int n, double radius, int per_axis, std::mt19937_64& rng) {
  std::vector<Vec> pts;
  const int k = std::max(per_axis, 2);
  if (n == 1) {
    for (int i = 0; i < k; ++i) pts.push_back(Vec::Constant(1, radius * (-1.0 + 2.0 * i / (k - 1))));
    return pts;
  }
  if (n == 2) {
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        Vec p(2);
        p << radius * (-1.0 + 2.0 * i / (k - 1)), radius * (-1.0 + 2.0 * j / (k - 1));
        if (p.norm() <= radius * (1.0 + 1e-12)) pts.push_back(p);
      }
    }
    for (int i = 0; i < 4 * k; ++i) {
      const double a = 2.0 * M_PI * i / (4 * k);
      Vec p(2);
      p << radius * std::cos(a), radius * std::sin(a);
      pts.push_back(p);
    }
    return pts;
  }
  pts.push_back(Vec::Zero(n));
  for (int i = 0; i < n; ++i) {
    pts.push_back(Vec::Unit(n, i) * radius);
    pts.push_back(-Vec::Unit(n, i) * radius);
  }
  for (int i = 0; i < k * k; ++i) pts.push_back(random_in_ball(rng, n, radius));
  return pts;
}

/// Unit directions: +-1 in 1-D, `count` equiangular in 2-D, axes plus random beyond.
inline std::vector<Vec> unit_directions(int n, int count, std::mt19937_64& rng) {
  std::vector<Vec> dirs;
  if (n == 1) return {Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)};
  if (n == 2) {
    for (int i = 0; i < count; ++i) {
      const double a = 2.0 * M_PI * i / count;
      Vec p(2);
      p << std::cos(a), std::sin(a);
      dirs.push_back(p);
    }
    return dirs;
  }
  for (int i = 0; i < n; ++i) {
    dirs.push_back(Vec::Unit(n, i));
    dirs.push_back(-Vec::Unit(n, i));
  }
  for (int i = 0; i < count; ++i) dirs.push_back(random_unit(rng, n));
  return dirs;
}

inline std::string describe(double t, const Vec& x) {
  std::ostringstream w;
  w << "t=" << t << " x=" << x.transpose();
  return w.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sublinear growth: |f(t,x,u)| <= theta(t) (1 + |x| + |u|).

struct CertifyOptions {
  double safety = 1.1;
  std::uint64_t seed = 1;
  int state_points = 9;    // per axis
  int control_points = 9;  // per axis
  /// Decades probed when testing growth at large |x| + |u|.
  int growth_decades = 6;
};

struct EnvelopeCertificate {
  std::vector<double> values;
  Provenance provenance = Provenance::certified;
  double worst_ratio = 0.0;
  std::string witness;
  long long samples = 0;
};

inline EnvelopeCertificate certify_sublinear(const DynamicsModel& model, const TimeGrid& grid, double state_radius,
                                             double control_radius, const CertifyOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  const int n = model.state_dim, m = model.control_dim;
  const auto xs = detail::ball_points(n, state_radius, opt.state_points, rng);
  const auto us = detail::ball_points(m, control_radius, opt.control_points, rng);
  EnvelopeCertificate cert;
  cert.values.resize(grid.size());

  // Growth probe: the ratio must not keep increasing along rays to infinity.
  const auto dirs_x = detail::unit_directions(n, 8, rng);
  const auto dirs_u = detail::unit_directions(m, 8, rng);
  for (double t : {grid.t0(), 0.5 * (grid.t0() + grid.t1()), grid.t1()}) {
    std::vector<double> ratio(static_cast<std::size_t>(opt.growth_decades) + 1, 0.0);
    for (int k = 0; k <= opt.growth_decades; ++k) {
      const double scale = std::pow(10.0, k);
      for (const auto& dx : dirs_x) {
        for (const auto& du : dirs_u) {
          for (double wx : {0.0, 1.0}) {
            const Vec x = dx * scale * wx;
            const Vec u = du * scale;
            double r = 0.0;
            try {
              r = model.eval(t, x, u).norm() / (1.0 + x.norm() + u.norm());
            } catch (const Error& e) {
              if (e.kind() != ErrorKind::model) throw;
              throw Error(ErrorKind::certification, "growth: right-hand side not finite at large arguments",
                          e.witness());
            }
            ratio[static_cast<std::size_t>(k)] = std::max(ratio[static_cast<std::size_t>(k)], r);
          }
        }
      }
    }
    const auto K = static_cast<std::size_t>(opt.growth_decades);
    if (K >= 2 && ratio[K] > 1.5 * ratio[K - 1] && ratio[K - 1] > 1.5 * ratio[K - 2]) {
      std::ostringstream w;
      w << "t=" << t << " ratio at scale 1e" << K - 2 << ".." << "1e" << K << ": " << ratio[K - 2] << ", "
        << ratio[K - 1] << ", " << ratio[K];
      throw Error(ErrorKind::certification, "growth: |f| / (1 + |x| + |u|) diverges (super-linear model)", w.str());
    }
  }

  const bool declared = static_cast<bool>(model.declared.theta);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    double best = 0.0;
    for (const auto& x : xs) {
      for (const auto& u : us) {
        const double r = model.eval(t, x, u).norm() / (1.0 + x.norm() + u.norm());
        ++cert.samples;
        if (r > best) best = r;
        if (r > cert.worst_ratio) {
          cert.worst_ratio = r;
          cert.witness = detail::describe(t, x) + " u=" + std::to_string(u.norm());
        }
      }
    }
    if (declared) {
      const double d = model.declared.theta(t);
      if (best > d * (1.0 + 1e-12)) {
        std::ostringstream w;
        w << "t=" << t << " sampled ratio " << best << " > declared " << d;
        throw Error(ErrorKind::certification, "growth: declared envelope violated", w.str());
      }
      cert.values[i] = d;
    } else {
      cert.values[i] = opt.safety * best;
    }
  }
  cert.provenance = declared ? Provenance::declared : Provenance::certified;
  return cert;
}

// ---------------------------------------------------------------------------
// Lipschitz continuity in x on the radius-R ball.

inline EnvelopeCertificate certify_lipschitz(const DynamicsModel& model, const TimeGrid& grid, double radius,
                                             double control_radius, const CertifyOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed + 1);
  const int n = model.state_dim, m = model.control_dim;
  // A 1-D lattice is cheap; square its density so oscillating drifts are resolved.
  auto anchors = detail::ball_points(n, radius, n == 1 ? opt.state_points * opt.state_points : opt.state_points, rng);
  anchors.push_back(Vec::Zero(n));
  const auto us = detail::ball_points(m, control_radius, std::max(3, opt.control_points / 2), rng);
  const auto dirs = detail::unit_directions(n, 4, rng);
  const double hs[3] = {1e-3 * radius, 1e-5 * radius, 1e-7 * radius};

  auto quotient = [&](double t, const Vec& x, const Vec& d, double h, const Vec& u) {
    return (model.eval(t, x + h * d, u) - model.eval(t, x, u)).norm() / h;
  };

  // Blow-up probe: a quotient that keeps growing as h shrinks has no finite bound.
  for (double t : {grid.t0(), 0.5 * (grid.t0() + grid.t1()), grid.t1()}) {
    for (const auto& x : anchors) {
      for (const auto& d : dirs) {
        for (const auto& u : us) {
          const double q0 = quotient(t, x, d, hs[0], u);
          const double q1 = quotient(t, x, d, hs[1], u);
          const double q2 = quotient(t, x, d, hs[2], u);
          if (q2 > 3.0 * q1 && q1 > 3.0 * q0 && q2 > 1e-6) {
            std::ostringstream w;
            w << detail::describe(t, x) << " y=" << (x + hs[2] * d).transpose() << " quotient " << q2;
            throw Error(ErrorKind::certification, "Lipschitz quotient unbounded as pairs approach", w.str());
          }
        }
      }
    }
  }

  EnvelopeCertificate cert;
  cert.values.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    double best = 0.0;
    for (const auto& x : anchors) {
      for (const auto& d : dirs) {
        for (const auto& u : us) {
          for (double h : {hs[1], hs[2]}) {
            const double q = quotient(t, x, d, h, u);
            ++cert.samples;
            if (q > best) best = q;
            if (q > cert.worst_ratio) {
              cert.worst_ratio = q;
              cert.witness = detail::describe(t, x);
            }
          }
        }
      }
    }
    cert.values[i] = opt.safety * best;
  }
  if (model.declared.kf) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double d = model.declared.kf(grid[i]);
      if (cert.values[i] / opt.safety > d * (1.0 + 1e-9)) {
        throw Error(ErrorKind::certification, "Lipschitz: declared modulus violated",
                    "t=" + std::to_string(grid[i]));
      }
      cert.values[i] = d;
    }
    cert.provenance = Provenance::declared;
  }
  return cert;
}

// ---------------------------------------------------------------------------
// Inward-pointing condition: near the boundary some u in M_u B pushes the
// whole xi-ball y + delta (v + xi B) into A_{eps, t + delta} for delta <= xi.

struct InwardOptions {
  std::vector<double> m_u_candidates{0.5, 1.0, 2.0, 4.0, 8.0};
  double xi_max = 1.0;
  int xi_halvings = 8;
  int eta_halvings = 10;
  int time_samples = 11;
  int delta_samples = 16;
  int y_samples = 9;        // per axis of the unit ball
  int direction_samples = 8;
  int control_samples = 33; // per axis of the M_u ball
  SampleOptions collar{81, 128, 7};
  double tolerance = 1e-12;
};

/// Sample points of (x + xi B) cap A_{eps,t}, with boundary points found along
/// each segment from x to an infeasible sample. {x} when x is not in the set.
inline std::vector<Vec> inclusion_sources(const ConstraintField& f, double eps, double t, const Vec& x, double xi,
                                          const std::vector<Vec>& unit_ball) {
  std::vector<Vec> ys;
  if (!f.feasible(eps, t, x)) return {x};
  for (const auto& b : unit_ball) {
    const Vec y = x + xi * b;
    if (f.feasible(eps, t, y)) {
      ys.push_back(y);
      continue;
    }
    Vec in = x, out = y;
    for (int k = 0; k < 60; ++k) {
      Vec mid = 0.5 * (in + out);
      if (f.feasible(eps, t, mid)) in = mid;
      else out = mid;
    }
    ys.push_back(in);
  }
  return ys;
}

/// Normalized inclusion margin: min over sampled delta in (0, xi], y, w of
/// -(eps + max_p h_p(t + delta, y + delta (v + xi w))) / delta. Nonnegative iff
/// every sample stays in the tightened set.
inline double inclusion_margin(const ConstraintField& f, double eps, double t, double horizon,
                               const std::vector<Vec>& ys, const Vec& v, double xi, int delta_samples,
                               const std::vector<Vec>& dirs) {
  double worst = std::numeric_limits<double>::infinity();
  for (int j = 1; j <= delta_samples; ++j) {
    const double delta = xi * j / delta_samples;
    if (t + delta > horizon + kTimeTol) break;
    for (const auto& y : ys) {
      for (const auto& w : dirs) {
        const double m = f.margin(eps, t + delta, y + delta * (v + xi * w)) / delta;
        if (m < worst) worst = m;
      }
    }
  }
  return worst;
}

struct InwardChoice {
  Vec u;
  Vec v;
  double margin = -std::numeric_limits<double>::infinity();
};

namespace detail {

struct InwardSampler {
  std::vector<Vec> unit_ball;
  std::vector<Vec> dirs;
  std::vector<Vec> controls;  // unit-ball control candidates, scaled by M_u

  InwardSampler(int n, int m, const InwardOptions& opt, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    unit_ball = ball_points(n, 1.0, opt.y_samples, rng);
    dirs = unit_directions(n, opt.direction_samples, rng);
    controls = ball_points(m, 1.0, m == 1 ? opt.control_samples : std::max(5, opt.control_samples / 3), rng);
  }
};

inline InwardChoice best_inward(const ConstraintField& f, const DynamicsModel& model, double eps, double t,
                                double horizon, const Vec& x, double m_u, double xi, const InwardSampler& s,
                                int delta_samples) {
  const auto ys = inclusion_sources(f, eps, t, x, xi, s.unit_ball);
  InwardChoice best;
  for (const auto& c : s.controls) {
    const Vec u = m_u * c;
    const Vec v = model.eval(t, x, u);
    const double mg = inclusion_margin(f, eps, t, horizon, ys, v, xi, delta_samples, s.dirs);
    const bool better = mg > best.margin || (mg == best.margin && best.u.size() > 0 && u.norm() < best.u.norm());
    if (best.u.size() == 0 || better) best = InwardChoice{u, v, mg};
  }
  return best;
}

}  // namespace detail

struct InwardCertificate {
  double M_u = 0.0;
  double M_v = 0.0;
  double xi = 0.0;
  double eta = 0.0;
  long long samples = 0;
  std::vector<double> eps_list;
  std::string witness;  // worst collar sample of the accepted candidate
};

/// Searches (xi, M_u, eta) in that priority: largest xi, then smallest M_u,
/// then largest eta. Fails when no candidate holds on the boundary itself.
inline InwardCertificate certify_inward_pointing(const ConstraintField& field, const DynamicsModel& model,
                                                 const std::vector<double>& eps_list, double box_radius,
                                                 double horizon, const InwardOptions& opt = {},
                                                 std::uint64_t seed = 1) {
  if (field.state_dim != model.state_dim) throw Error(ErrorKind::shape, "constraint and model dimensions differ");
  const detail::InwardSampler sampler(model.state_dim, model.control_dim, opt, seed);

  std::vector<double> times;
  for (int j = 0; j < opt.time_samples; ++j) {
    times.push_back(opt.time_samples == 1 ? 0.0 : horizon * j / (opt.time_samples - 1));
  }
  for (double b : model.breakpoints) {
    if (b >= 0.0 && b < horizon) times.push_back(b);
  }
  for (const auto& s : model.singularities) {
    if (s.at + s.start < horizon) times.push_back(s.at + s.start);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());

  struct CollarPoint {
    double eps, t, d_boundary;
    Vec x;
  };
  std::vector<CollarPoint> collar;
  for (double eps : eps_list) {
    for (double t : times) {
      for (auto& x : sample_ball_with_boundary(field, eps, t, box_radius, opt.collar)) {
        if (!field.feasible(eps, t, x)) continue;
        const double d = dist_to_boundary(field, eps, t, x);
        if (!std::isfinite(d)) continue;
        collar.push_back({eps, t, d, std::move(x)});
      }
    }
  }
  // Boundary points first: they decide feasibility of a candidate fastest.
  std::stable_sort(collar.begin(), collar.end(),
                   [](const CollarPoint& a, const CollarPoint& b) { return a.d_boundary < b.d_boundary; });

  InwardCertificate cert;
  cert.eps_list = eps_list;
  if (collar.empty()) {
    // Constraint never active in the box: vacuous.
    cert.xi = opt.xi_max;
    cert.eta = box_radius;
    cert.M_u = opt.m_u_candidates.front();
    return cert;
  }

  std::string last_failure;
  for (int jx = 0; jx <= opt.xi_halvings; ++jx) {
    const double xi = opt.xi_max * std::ldexp(1.0, -jx);
    for (double m_u : opt.m_u_candidates) {
      double fail_depth = std::numeric_limits<double>::infinity();
      double m_v = 0.0;
      double worst = std::numeric_limits<double>::infinity();
      std::string worst_at;
      for (const auto& p : collar) {
        if (p.d_boundary >= fail_depth) break;
        const auto choice = detail::best_inward(field, model, p.eps, p.t, horizon, p.x, m_u, xi, sampler,
                                                opt.delta_samples);
        cert.samples += static_cast<long long>(sampler.controls.size());
        if (choice.margin < -opt.tolerance) {
          fail_depth = p.d_boundary;
          std::ostringstream w;
          w << "eps=" << p.eps << " " << detail::describe(p.t, p.x) << " xi=" << xi << " M_u=" << m_u
            << " margin=" << choice.margin;
          last_failure = w.str();
          break;
        }
        if (choice.margin < worst) {
          worst = choice.margin;
          worst_at = "eps=" + format_double(p.eps) + " " + detail::describe(p.t, p.x);
        }
        m_v = std::max(m_v, choice.v.norm());
      }
      // Collar depth: the largest eta = box / 2^j below the first failing depth.
      double eta = 0.0;
      for (int je = 0; je <= opt.eta_halvings; ++je) {
        const double cand = box_radius * std::ldexp(1.0, -je);
        if (cand < fail_depth) {
          eta = cand;
          break;
        }
      }
      if (eta <= 0.0 || fail_depth <= 0.0) continue;
      // Velocities of the accepted candidate over the whole collar of depth eta.
      for (const auto& p : collar) {
        if (p.d_boundary > eta) break;
        m_v = std::max(m_v, detail::best_inward(field, model, p.eps, p.t, horizon, p.x, m_u, xi, sampler,
                                                opt.delta_samples).v.norm());
      }
      cert.M_u = m_u;
      cert.M_v = m_v;
      cert.xi = xi;
      cert.eta = eta;
      cert.witness = worst_at;
      return cert;
    }
  }
  throw Error(ErrorKind::certification, "inward-pointing condition fails at every candidate (xi, M_u)",
              last_failure);
}

/// Max-margin inward control at (eps, t, x); ties go to the smaller |u|.
/// Throws an inward-control error when x is in the set and no candidate keeps
/// the sampled inclusion.
inline InwardChoice inward_control_at(const HypothesisBundle& bundle, const ConstraintField& field,
                                      const DynamicsModel& model, double eps, double t, const Vec& x,
                                      const InwardOptions& opt = {}) {
  const detail::InwardSampler sampler(model.state_dim, model.control_dim, opt, bundle.seed);
  auto choice = detail::best_inward(field, model, eps, t, bundle.grid.t1(), x, bundle.M_u, bundle.xi, sampler,
                                    opt.delta_samples);
  if (choice.margin < -opt.tolerance && field.feasible(eps, t, x)) {
    std::ostringstream w;
    w << "eps=" << eps << " " << detail::describe(t, x) << " best margin=" << choice.margin;
    throw Error(ErrorKind::inward_control, "no control in the M_u ball keeps the inclusion", w.str());
  }
  return choice;
}

// ---------------------------------------------------------------------------
// Time regularity of the re-selection u_s -> u_t, and its Hoelder gain.

struct TimeRegularityOptions {
  int states_per_node = 2;
  int controls_per_node = 4;
  int random_times = 4;
  std::uint64_t seed = 3;
  SelectionOptions selection;
};

struct TimeRegularity {
  std::vector<double> gamma;
  std::vector<double> beta_u;
  std::vector<double> ku;  // declared gain (validated) or sampled max quotient
  std::vector<double> ku_sampled;
  std::optional<double> alpha;
  Provenance gamma_provenance = Provenance::certified;
  Provenance ku_provenance = Provenance::certified;
  double worst_residual_ratio = 0.0;  // residual / budget
  std::string witness;
  long long samples = 0;
};

inline TimeRegularity certify_time_regularity(const DynamicsModel& model, const ControlSignal& ubar,
                                              const TimeGrid& grid, double state_radius, double m_u,
                                              const TimeRegularityOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  const int n = model.state_dim, m = model.control_dim;
  const std::size_t nodes = grid.size();
  TimeRegularity out;
  out.gamma.assign(nodes, 0.0);
  out.beta_u.assign(nodes, 0.0);
  out.ku.assign(nodes, 0.0);
  out.ku_sampled.assign(nodes, 0.0);
  out.alpha = model.declared.alpha;
  const double T = grid.t1();
  const double h = grid.step();

  std::function<double(double, double)> budget;
  if (model.declared.gamma || model.declared.gamma_integral) {
    budget = [&model](double s, double t) { return gamma_integral(model, s, t); };
    for (std::size_t i = 0; i < nodes; ++i) out.gamma[i] = model.declared.gamma ? model.declared.gamma(grid[i]) : 0.0;
    out.gamma_provenance = Provenance::declared;
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> residual_rate(nodes, 0.0);
  struct Sample {
    std::size_t i;
    double s, t;
    Vec x, us;
  };
  std::vector<Sample> samples;
  for (std::size_t i = 0; i + 1 < nodes; ++i) {
    const double s = grid[i];
    std::vector<double> ts{std::min(s + h, T), std::min(s + 10 * h, T), std::min(s + 100 * h, T), T};
    for (double b : model.breakpoints) {
      if (b > s && b <= T) ts.push_back(b);
    }
    for (const auto& sg : model.singularities) {
      if (sg.at + sg.start > s && sg.at + sg.start <= T) ts.push_back(sg.at + sg.start);
    }
    for (int k = 0; k < opt.random_times; ++k) ts.push_back(s + (T - s) * unit(rng));
    const double ubar_norm = ubar(s).norm();
    const double u_radius = m_u + ubar_norm;
    std::vector<Vec> controls;
    for (int c = 0; c < m; ++c) {
      controls.push_back(Vec::Unit(m, c) * u_radius);
      controls.push_back(-Vec::Unit(m, c) * u_radius);
    }
    for (int k = 0; k < opt.controls_per_node; ++k) controls.push_back(detail::random_in_ball(rng, m, u_radius));
    for (int a = 0; a < opt.states_per_node; ++a) {
      const Vec x = detail::random_in_ball(rng, n, state_radius);
      for (const auto& us : controls) {
        for (double t : ts) {
          if (t > s) samples.push_back({i, s, t, x, us});
        }
      }
    }
  }

  // Without a declared density, gamma is the per-node residual rate over one step.
  if (!budget) {
    for (const auto& smp : samples) {
      if (smp.t - smp.s > h * (1.0 + 1e-9)) continue;
      SelectionOptions so = opt.selection;
      so.budget = -1.0;
      const auto sel = shift_selection(model, smp.s, smp.t, smp.x, smp.us, so);
      residual_rate[smp.i] = std::max(residual_rate[smp.i], sel.residual / (smp.t - smp.s));
    }
    for (std::size_t i = 0; i < nodes; ++i) {
      const double left = i > 0 ? residual_rate[i - 1] : 0.0;
      out.gamma[i] = 1.1 * std::max(residual_rate[i], left);
    }
    auto cum = std::make_shared<std::vector<double>>(detail::cumulative_trapezoid(grid, out.gamma));
    auto g = std::make_shared<TimeGrid>(grid);
    // Window integral with the step-rate envelope; piecewise linear in between.
    budget = [cum, g](double s, double t) {
      auto at = [&](double x) {
        const std::size_t j = g->locate(x);
        if (j + 1 >= g->size()) return cum->back();
        const double w = (x - (*g)[j]) / ((*g)[j + 1] - (*g)[j]);
        return (*cum)[j] + w * ((*cum)[j + 1] - (*cum)[j]);
      };
      return at(t) - at(s);
    };
  }

  for (const auto& smp : samples) {
    SelectionOptions so = opt.selection;
    const double b = budget(smp.s, smp.t);
    so.budget = b;
    Selection sel;
    try {
      sel = shift_selection(model, smp.s, smp.t, smp.x, smp.us, so);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::selection_infeasible) throw;
      throw Error(ErrorKind::certification, "time regularity: selection residual exceeds the gamma budget",
                  e.witness());
    }
    ++out.samples;
    if (b > 0.0) out.worst_residual_ratio = std::max(out.worst_residual_ratio, sel.residual / b);
    const double jump = (sel.u - smp.us).norm();
    out.beta_u[smp.i] = std::max(out.beta_u[smp.i], jump);
    if (out.alpha) {
      const double q = jump / std::pow(smp.t - smp.s, *out.alpha);
      out.ku_sampled[smp.i] = std::max(out.ku_sampled[smp.i], q);
    }
  }

  if (out.alpha && model.declared.ku) {
    for (std::size_t i = 0; i + 1 < nodes; ++i) {
      const double s = grid[i];
      const double declared = model.declared.ku(s, m_u, ubar(s).norm());
      if (out.ku_sampled[i] > declared * (1.0 + 1e-9)) {
        std::ostringstream w;
        w << "s=" << s << " sampled k_u " << out.ku_sampled[i] << " > declared " << declared;
        throw Error(ErrorKind::certification, "Hoelder selection: declared gain violated", w.str());
      }
      out.ku[i] = declared;
    }
    out.ku.back() = model.declared.ku(T, m_u, ubar(T).norm());
    out.ku_provenance = Provenance::declared;
  } else if (out.alpha) {
    for (std::size_t i = 0; i < nodes; ++i) out.ku[i] = 1.1 * out.ku_sampled[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bundle assembly.

struct BundleOptions {
  double eps0 = 0.25;
  double delta0 = 0.5;
  std::vector<double> lambdas{0.4, 0.2, 0.1, 0.05};
  std::uint64_t seed = 1;
  CertifyOptions certify;
  InwardOptions inward;
  TimeRegularityOptions regularity;
  PerturbationOptions perturbation;
  BoundaryModulusOptions boundary;
  /// Re-run the growth and Lipschitz certifiers on a 2x finer sample set.
  bool stability_check = true;
};

/// The eps values on which the inward-pointing and boundary-drift constants are certified.
inline std::vector<double> bundle_eps_list(double eps0) {
  return {eps0, eps0 / 2.0, eps0 / 4.0, eps0 / 8.0};
}

namespace detail {

/// Re-certifies with doubled sampling; a finer raw maximum above the issued
/// value, or a failing declaration, demotes the constant.
inline void stability_pass(HypothesisBundle& b, const std::string& name, const std::vector<double>& issued,
                           const std::function<EnvelopeCertificate(const CertifyOptions&)>& run,
                           const CertifyOptions& base) {
  CertifyOptions fine = base;
  fine.state_points = 2 * base.state_points;
  fine.control_points = 2 * base.control_points;
  fine.seed = base.seed + 101;
  try {
    const auto again = run(fine);
    if (again.provenance == Provenance::declared) return;
    for (std::size_t i = 0; i < issued.size(); ++i) {
      if (again.values[i] / fine.safety > issued[i] * (1.0 + 1e-12)) {
        b.provenance[name] = Provenance::declared_only;
        b.witnesses[name + ".stability"] = "t=" + format_double(b.grid[i]) + " finer sample " +
                                           format_double(again.values[i] / fine.safety) + " > " +
                                           format_double(issued[i]);
        return;
      }
    }
  } catch (const Error& e) {
    b.provenance[name] = Provenance::declared_only;
    b.witnesses[name + ".stability"] = e.what();
  }
}

}  // namespace detail

/// Certifies every constant of the construction for (model, field) around the
/// reference (xbar, ubar) on the base grid `grid`. Throws a certification error
/// naming the failing hypothesis.
inline HypothesisBundle certify_bundle(const DynamicsModel& model, const ConstraintField& field,
                                       const Trajectory& xbar, const ControlSignal& ubar, const TimeGrid& grid,
                                       const BundleOptions& opt = {}) {
  if (field.state_dim != model.state_dim || xbar.dim() != model.state_dim || ubar.dim() != model.control_dim) {
    throw Error(ErrorKind::shape, "model, constraint and reference dimensions differ");
  }
  auto stage = [](const char* h, const Error& e) {
    return Error(e.kind() == ErrorKind::certification ? ErrorKind::certification : e.kind(),
                 std::string(h) + ": " + e.what(), e.witness());
  };
  HypothesisBundle b;
  b.grid = grid;
  b.seed = opt.seed;
  const double T = grid.t1();
  b.xbar_linf = xbar.sup_norm();
  b.box_radius = 1.0 + 2.0 * b.xbar_linf;
  b.delta0 = opt.delta0;

  // Regular perturbation: eps0 and the lambda -> eps table.
  PerturbationOptions po = opt.perturbation;
  po.eps0 = opt.eps0;
  po.horizon = T;
  po.samples.seed = opt.seed;
  try {
    if (!field.feasible(opt.eps0, 0.0, xbar.state(0)) && !field.feasible(0.0, 0.0, xbar.state(0))) {
      throw Error(ErrorKind::certification, "reference starts outside A_0", detail::describe(0.0, xbar.state(0)));
    }
    for (double lam : opt.lambdas) {
      b.lambda_to_eps.emplace_back(lam, certify_regular_perturbation(field, lam, b.box_radius, po));
    }
  } catch (const Error& e) {
    throw stage("regular perturbation", e);
  }
  std::sort(b.lambda_to_eps.begin(), b.lambda_to_eps.end(), [](const auto& a, const auto& c) { return a.first > c.first; });
  b.eps0 = opt.eps0;
  b.eps_list = bundle_eps_list(opt.eps0);
  b.provenance["eps0"] = Provenance::certified;

  BoundaryModulusOptions bo = opt.boundary;
  bo.horizon = T;
  bo.samples.seed = opt.seed + 1;
  b.omega_A = build_boundary_modulus(field, b.eps_list, b.box_radius, opt.delta0, bo);
  b.provenance["omega_A"] = Provenance::certified;

  InwardCertificate inward;
  try {
    inward = certify_inward_pointing(field, model, b.eps_list, b.box_radius, T, opt.inward, opt.seed + 2);
  } catch (const Error& e) {
    throw stage("inward pointing", e);
  }
  b.M_u = inward.M_u;
  b.M_v = inward.M_v;
  b.xi = inward.xi;
  b.eta = inward.eta;
  for (const char* c : {"M_u", "M_v", "xi", "eta"}) b.provenance[c] = Provenance::certified;
  b.witnesses["inward"] = inward.witness;
  b.sample_counts["inward"] = inward.samples;

  const double control_radius = b.M_u + ubar.sup_norm();
  CertifyOptions co = opt.certify;
  co.seed = opt.seed + 3;
  EnvelopeCertificate growth;
  try {
    growth = certify_sublinear(model, grid, b.box_radius, control_radius, co);
  } catch (const Error& e) {
    throw stage("sublinear growth", e);
  }
  b.theta = growth.values;
  b.provenance["theta"] = growth.provenance;
  b.witnesses["theta"] = growth.witness;
  b.sample_counts["theta"] = growth.samples;

  TimeRegularity reg;
  TimeRegularityOptions ro = opt.regularity;
  ro.seed = opt.seed + 4;
  try {
    reg = certify_time_regularity(model, ubar, grid, b.box_radius, b.M_u, ro);
  } catch (const Error& e) {
    throw stage("time regularity", e);
  }
  b.gamma = reg.gamma;
  b.beta_u = reg.beta_u;
  b.alpha = reg.alpha;
  b.ku = reg.alpha ? reg.ku : std::vector<double>(grid.size(), 0.0);
  b.provenance["gamma"] = reg.gamma_provenance;
  b.provenance["beta_u"] = Provenance::certified;
  if (reg.alpha) {
    b.provenance["alpha"] = Provenance::declared;
    b.provenance["ku"] = reg.ku_provenance;
  }
  b.witnesses["gamma"] = reg.witness;
  b.sample_counts["regularity"] = reg.samples;

  // Lipschitz modulus on the Gronwall ball.
  const auto& g = grid;
  std::vector<double> th_sq(b.theta.size()), bu_sq(b.beta_u.size());
  for (std::size_t i = 0; i < th_sq.size(); ++i) th_sq[i] = b.theta[i] * b.theta[i];
  for (std::size_t i = 0; i < bu_sq.size(); ++i) bu_sq[i] = b.beta_u[i] * b.beta_u[i];
  const double ubar_l2 = std::sqrt(weighted_l2_cost(ubar, constant_weight(Mat::Identity(ubar.dim(), ubar.dim()))));
  const double R = gronwall_radius(trapezoid(g, b.theta), std::sqrt(trapezoid(g, th_sq)), b.xbar_linf, b.M_u,
                                   ubar_l2, std::sqrt(trapezoid(g, bu_sq)));
  EnvelopeCertificate lip;
  try {
    lip = certify_lipschitz(model, grid, R, control_radius, co);
  } catch (const Error& e) {
    throw stage("Lipschitz", e);
  }
  b.kf = lip.values;
  b.provenance["kf"] = lip.provenance;
  b.witnesses["kf"] = lip.witness;
  b.sample_counts["kf"] = lip.samples;

  if (opt.stability_check) {
    detail::stability_pass(
        b, "theta", b.theta,
        [&](const CertifyOptions& o) { return certify_sublinear(model, grid, b.box_radius, control_radius, o); }, co);
    detail::stability_pass(
        b, "kf", b.kf, [&](const CertifyOptions& o) { return certify_lipschitz(model, grid, R, control_radius, o); },
        co);
  }
  return b;
}

/// Starting eps for a given lambda: the table entry of the largest tabulated
/// lambda' <= lambda, else eps0 halved past the smallest entry.
inline double eps_for_lambda(const HypothesisBundle& b, double lambda) {
  double best = -1.0;
  double best_lambda = -1.0;
  for (const auto& [lam, eps] : b.lambda_to_eps) {
    if (lam <= lambda * (1.0 + 1e-12) && lam > best_lambda) {
      best_lambda = lam;
      best = eps;
    }
  }
  if (best > 0.0) return std::min(best, b.eps0);
  double smallest_eps = b.eps0;
  double smallest_lambda = std::numeric_limits<double>::infinity();
  for (const auto& [lam, eps] : b.lambda_to_eps) {
    if (lam < smallest_lambda) {
      smallest_lambda = lam;
      smallest_eps = eps;
    }
  }
  // Below the table: scale the smallest entry down with lambda.
  if (std::isfinite(smallest_lambda)) return std::min(b.eps0, smallest_eps * lambda / smallest_lambda);
  return b.eps0;
}

}  // namespace tightening
