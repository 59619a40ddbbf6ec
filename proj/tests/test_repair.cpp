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

#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "tightening/repair.hpp"
#include "tightening/scenario.hpp"

using namespace tightening;

namespace {

Vec scalar(double v) { return Vec::Constant(1, v); }

/// Surge scenario of the acceptance run, certified once for the suite.
struct Surge {
  ScenarioContext ctx;
  HypothesisBundle bundle;
  RepairConstants base;
};

const Surge& surge() {
  static const std::unique_ptr<Surge> s = [] {
    auto out = std::make_unique<Surge>();
    out->ctx = build_context(load_scenario(TIGHTENING_SCENARIO_DIR "/motor_surge.json"));
    out->bundle = certify_bundle(out->ctx.model, out->ctx.field, out->ctx.xbar, out->ctx.ubar, out->ctx.grid,
                                 bundle_options_for(out->ctx.scenario));
    out->base = schedule_base(out->bundle, out->ctx.xbar, out->ctx.ubar, out->ctx.weight);
    return out;
  }();
  return *s;
}

/// Constants with omega_f = 0 and omega_bar(delta) = slope * delta.
RepairConstants linear_constants(double slope, double k, double c_v, double m_delta) {
  RepairConstants c;
  c.k = k;
  c.C_vDelta = c_v;
  c.M_Delta = m_delta;
  c.omega_bar = ModulusTable({0.0, 100.0}, {0.0, 100.0 * slope}, 100.0);
  c.N0 = 7;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Growth maps.

TEST(GrowthMaps, ZeroViolationStaysZero) {
  const auto c = linear_constants(3.0, 4.0, 2.0, 0.1);
  const GrowthMaps gm{&c};
  EXPECT_EQ(gm.g(0.0), 0.0);
  EXPECT_EQ(gm.g_tilde(0.0), 0.0);
  for (double d : gm.d_tilde(0.0, 7)) EXPECT_EQ(d, 0.0);
}

TEST(GrowthMaps, LinearModulusGivesGeometricSums) {
  const double s = 3.0, k = 4.0, cv = 2.0, md = 0.1, rho = 1e-9;  // k g~^7(rho) stays inside the table
  const auto c = linear_constants(s, k, cv, md);
  const GrowthMaps gm{&c};
  // g(rho) = k rho (s + C + M) so g~ is multiplication by q.
  const double q = 1.0 + k * (s + cv + md);
  EXPECT_NEAR(gm.g(rho), k * rho * (s + cv + md), 1e-15);
  const auto d = gm.d_tilde(rho, 7);
  for (int n = 1; n <= 7; ++n) {
    const double closed = rho * q * (std::pow(q, n) - 1.0) / (q - 1.0);
    EXPECT_NEAR(d[static_cast<std::size_t>(n - 1)], closed, 1e-12 * closed) << "n=" << n;
  }
  EXPECT_NEAR(gm.compose(rho, 7), rho * std::pow(q, 7), 1e-12 * rho * std::pow(q, 7));
}

TEST(GrowthMaps, MonotoneInRho) {
  const auto& c = surge().base;
  const GrowthMaps gm{&c};
  double prev = 0.0;
  for (double rho = 1e-6; rho < 0.1; rho *= 1.7) {
    const double v = gm.g_tilde(rho);
    EXPECT_GE(v, prev);
    prev = v;
  }
}

TEST(GrowthMaps, SurgeSumsMatchNaiveLoop) {
  RepairConstants c = surge().base;
  c.N0 = 40;  // keeps the composed values finite
  const double rho = 1e-9;
  // Independent transcription of g, g~ and the partial sums.
  auto g = [&](double r) {
    const double kr = c.k * r;
    return std::exp(c.omega_f_T) * (c.omega_bar(kr) + kr * (c.C_vDelta + c.M_Delta * std::exp(2.0 * c.omega_f_Delta)));
  };
  double r = rho, sum = 0.0;
  std::vector<double> naive;
  for (int i = 1; i <= c.N0; ++i) {
    r = r + g(r);
    sum += r;
    naive.push_back(sum);
  }
  EXPECT_EQ(GrowthMaps{&c}.d_tilde(rho, c.N0), naive);
}

// ---------------------------------------------------------------------------
// Constant schedule.

TEST(Schedule, CompositeInequalityArithmetic) {
  // xi = 0.5, k = 8, M_Delta = 0.01, omega_f(Delta) = 0.1: 1 + 8 0.01 (1 + e^0.1) e^0.1 ~ 1.186 <= 2.
  HypothesisBundle b;
  b.xi = 0.5;
  b.eta = 1.0;
  b.M_v = 0.0;
  b.omega_A = ModulusTable::zero();
  RepairConstants c;
  c.omega_bar = ModulusTable::zero();
  c.omega_f = ModulusTable({0.0, 0.1}, {0.0, 0.1}, 0.1);
  c.omega_gamma = ModulusTable({0.0, 0.1}, {0.0, 0.01}, 0.1);
  const double lhs = 1.0 + 8.0 * 0.01 * (1.0 + std::exp(0.1)) * std::exp(0.1);
  EXPECT_NEAR(lhs, 1.186, 1e-3);
  EXPECT_TRUE(delta_conditions_hold(b, c, 0.1));
  c.omega_gamma = ModulusTable({0.0, 0.1}, {0.0, 0.3}, 0.1);  // M_Delta e^0.1 > xi / 2
  EXPECT_FALSE(delta_conditions_hold(b, c, 0.1));
}

TEST(Schedule, SurgeConstantsSatisfyEveryInequality) {
  const auto& b = surge().bundle;
  const auto& c = surge().base;
  const double e = std::exp(c.omega_f(c.Delta));
  EXPECT_LE(c.Delta, std::min(b.xi, b.delta0));
  EXPECT_LE(b.omega_A(c.Delta), b.eta / 4.0);
  EXPECT_LE(c.omega_bar(c.Delta), b.eta / 4.0);
  EXPECT_DOUBLE_EQ(c.M_Delta, c.omega_gamma(c.Delta) + b.M_v * c.omega_f(c.Delta));
  EXPECT_DOUBLE_EQ(c.C_vDelta, b.M_v + c.M_Delta * e);
  EXPECT_LE(c.k * c.rho_hat * b.M_v, 1.0 + 1e-15);
  EXPECT_LE(c.M_Delta * e, b.xi / 2.0);
  EXPECT_LT(2.0, c.k * b.xi);
  EXPECT_LE(1.0 + c.k * c.M_Delta * (1.0 + e) * e, c.k * b.xi / 2.0);
  EXPECT_LE(c.k * c.rho_hat, b.xi);
  EXPECT_LE(c.k * c.rho_hat, 1.0);
  // Delta is the first passing halving.
  if (2.0 * c.Delta <= std::min(b.xi, b.delta0)) EXPECT_FALSE(delta_conditions_hold(b, c, 2.0 * c.Delta));
  ASSERT_EQ(static_cast<int>(c.partition.size()), c.N0 + 1);
  EXPECT_EQ(c.partition.front(), 0.0);
  EXPECT_EQ(c.partition.back(), 2.0);
  for (std::size_t i = 1; i < c.partition.size(); ++i) {
    EXPECT_GT(c.partition[i] - c.partition[i - 1], 0.0);
    EXPECT_LE(c.partition[i] - c.partition[i - 1], c.Delta * (1.0 + 1e-9));
  }
  // The a-priori radius dominates the reference.
  EXPECT_GT(c.R - 1.0, surge().ctx.xbar.sup_norm());
}

TEST(Schedule, RadiusFormula) {
  const auto& b = surge().bundle;
  const auto& c = surge().base;
  const double expected = std::exp(c.theta_l1) *
                          (1.0 + c.xbar_linf + (1.0 + b.M_u) * c.theta_l1 + c.theta_l2 * (c.ubar_l2 + c.betau_l2));
  EXPECT_DOUBLE_EQ(c.R, expected);
}

TEST(Schedule, InteriorReferenceMeetsSmallnessWithZeroViolation) {
  RepairConstants c = surge().base;
  c.rho_bar_eps = 0.0;
  EXPECT_EQ(violated_eps_condition(c, 0.1), "");
  c.rho_bar_eps = 1.0;
  EXPECT_EQ(violated_eps_condition(c, 0.1), "rho_bar_eps <= rho_hat");
}

TEST(Schedule, OversizedEtaQuarterFailsAsDeltaInfeasible) {
  HypothesisBundle b = surge().bundle;
  b.eta = 1e-9;
  try {
    schedule_base(b, surge().ctx.xbar, surge().ctx.ubar, surge().ctx.weight);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::schedule);
    EXPECT_NE(std::string(e.what()).find("Delta-infeasible"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// One interval.

namespace {

struct IntervalRun {
  RepairConstants c;
  Trajectory xbar;
  ControlSignal u;
};

IntervalRun interval_setup(double eps) {
  const auto& s = surge();
  IntervalRun r;
  r.c = s.base;
  r.c.eps = eps;
  r.u = s.ctx.ubar.refined(r.c.partition);
  r.xbar = integrate(s.ctx.model, r.u, s.ctx.xbar.state(0), 0.0, 2.0, integrator_for(s.ctx.scenario));
  return r;
}

IntervalOutput run_interval(const IntervalRun& r, const HypothesisBundle& b, int i) {
  const auto& s = surge();
  const auto cum = detail::cumulative_trapezoid(b.grid, b.gamma);
  return repair_interval(IntervalInput{&r.xbar, &r.u, i, r.c.eps}, r.c, b, s.ctx.field, s.ctx.model, r.xbar,
                         repair_options_for(s.ctx.scenario), cum);
}

}  // namespace

TEST(RepairInterval, FarFromBoundaryIsIdentity) {
  HypothesisBundle b = surge().bundle;
  b.eta = 0.1;  // x = 1.5 is 0.45 from the boundary of A_0.05
  const auto r = interval_setup(0.05);
  const auto out = run_interval(r, b, 0);
  EXPECT_EQ(out.record.which, IntervalCase::far_identity);
  EXPECT_FALSE(out.x.has_value());
  EXPECT_EQ(out.record.step_gap, 0.0);
}

TEST(RepairInterval, LongBurstSpansTheInterval) {
  const auto r = interval_setup(0.05);
  const auto out = run_interval(r, surge().bundle, 0);
  ASSERT_EQ(out.record.which, IntervalCase::burst);
  EXPECT_GE(r.c.k * out.record.rho, r.c.partition[1] - r.c.partition[0]);
  EXPECT_EQ(out.record.tau, r.c.partition[1]);
  EXPECT_EQ(out.record.u0[0], 2.0);
  // Before t_0 nothing changes; x_{i+1}(t_i) = x_i(t_i).
  EXPECT_EQ(out.x->state(0)[0], r.xbar.state(0)[0]);
  EXPECT_GT(out.record.interval_margin, 0.0);
  EXPECT_LE(out.record.cone_excess, 1e-12);
  EXPECT_LE(out.record.step_gap, out.record.g_bound);
}

TEST(RepairInterval, ShortBurstExercisesDelayedSelection) {
  // rho = 1e-5 makes k rho = 4e-5 shorter than the interval.
  const auto r = interval_setup(1e-5);
  const auto out = run_interval(r, surge().bundle, 0);
  ASSERT_EQ(out.record.which, IntervalCase::burst);
  EXPECT_LT(out.record.tau, r.c.partition[1]);
  EXPECT_NEAR(out.record.tau, r.c.k * out.record.rho, 1e-15);
  EXPECT_GT(out.record.delayed_gap_excess, -std::numeric_limits<double>::infinity());
  EXPECT_LE(out.record.delayed_gap_excess, 0.0);
  EXPECT_LE(out.record.cone_excess, 1e-12);
  EXPECT_LE(out.record.step_gap, out.record.g_bound);
  // The control after t_1 is untouched.
  const double t = 0.5;
  EXPECT_EQ(out.u->operator()(t)[0], r.u(t)[0]);
}

// ---------------------------------------------------------------------------
// Top-level driver.

TEST(Repair, StrictlyInteriorReferenceIsReturnedUnchanged) {
  const auto& s = surge();
  const auto ubar = ControlSignal::constant(s.ctx.grid, scalar(0.5));
  const auto xbar = integrate(s.ctx.model, ubar, scalar(1.5), 0.0, 2.0, integrator_for(s.ctx.scenario));
  const auto res = repair(xbar, ubar, 0.1, s.bundle, s.ctx.field, s.ctx.model, s.ctx.weight,
                          repair_options_for(s.ctx.scenario));
  ASSERT_TRUE(res.ok) << res.failure_stage;
  EXPECT_EQ(res.report.mode, "certified");
  EXPECT_EQ(res.constants.rho_bar_eps, 0.0);
  EXPECT_EQ(res.report.linf_gap, 0.0);
  EXPECT_EQ(res.report.cost_gap, 0.0);
  EXPECT_EQ(res.report.l2_theoretical_bound, 0.0);
  for (const auto& it : res.report.iterations) EXPECT_NE(it.which, IntervalCase::burst);
  ASSERT_EQ(res.x.size(), xbar.size());
  for (std::size_t i = 0; i < xbar.size(); ++i) EXPECT_EQ(res.x.state(i)[0], xbar.state(i)[0]);
}

TEST(Repair, StartOnTheBoundaryIsAnInitialConditionFailure) {
  const auto& s = surge();
  const auto ubar = ControlSignal::constant(s.ctx.grid, scalar(0.5));
  const auto xbar = integrate(s.ctx.model, ubar, scalar(1.0), 0.0, 2.0, integrator_for(s.ctx.scenario));
  const auto res = repair(xbar, ubar, 0.1, s.bundle, s.ctx.field, s.ctx.model, s.ctx.weight);
  EXPECT_FALSE(res.ok);
  EXPECT_EQ(res.failure_stage, "initial-condition");
}

TEST(Repair, IncompleteBundleIsRefused) {
  const auto& s = surge();
  HypothesisBundle b = s.bundle;
  b.kf.clear();
  const auto res = repair(s.ctx.xbar, s.ctx.ubar, 0.1, b, s.ctx.field, s.ctx.model, s.ctx.weight);
  EXPECT_FALSE(res.ok);
  EXPECT_EQ(res.failure_stage, "bundle");
}

TEST(Repair, StrictModeRejectsVacuousSmallnessConditions) {
  const auto& s = surge();
  RepairOptions opt = repair_options_for(s.ctx.scenario);
  opt.fallback = false;
  opt.eps_min = 1e-3;
  const auto res = repair(s.ctx.xbar, s.ctx.ubar, 0.1, s.bundle, s.ctx.field, s.ctx.model, s.ctx.weight, opt);
  EXPECT_FALSE(res.ok);
  EXPECT_EQ(res.failure_stage, "eps-search");
  EXPECT_NE(std::string(res.failure->what()).find("eps-infeasible"), std::string::npos);
  EXPECT_FALSE(res.report.eps_rejections.empty());
}

TEST(Repair, SurgeMeetsTheContractAndEveryRecordedInvariant) {
  const auto& s = surge();
  const double lambda = 0.1;
  const auto res = repair(s.ctx.xbar, s.ctx.ubar, lambda, s.bundle, s.ctx.field, s.ctx.model, s.ctx.weight,
                          repair_options_for(s.ctx.scenario));
  ASSERT_TRUE(res.ok) << res.failure_stage << " " << (res.failure ? res.failure->what() : "");
  const auto& rep = res.report;
  EXPECT_GT(rep.margin, 0.0);
  EXPECT_LE(rep.linf_gap, lambda);
  EXPECT_LE(rep.cost_gap, lambda);
  EXPECT_EQ(rep.recursion_rho_violations, 0);
  EXPECT_TRUE(rep.recursion_d_holds);
  EXPECT_EQ(rep.envelope_violations, 0);
  EXPECT_EQ(rep.oscillation_violations, 0);
  EXPECT_EQ(rep.cone_violations, 0);
  EXPECT_EQ(rep.delayed_gap_violations, 0);
  // Re-derive the recursion from the logged data.
  const GrowthMaps gm{&res.constants};
  ASSERT_EQ(rep.rho.size(), static_cast<std::size_t>(res.constants.N0) + 1);
  for (std::size_t i = 0; i + 1 < rep.rho.size(); ++i) EXPECT_LE(rep.rho[i + 1], gm.g_tilde(rep.rho[i]));
  EXPECT_LE(rep.d.back(), gm.d_tilde_n(res.constants.rho_bar_eps, res.constants.N0));
  // Chosen eps is a halving of the tabulated start.
  const double start = eps_for_lambda(s.bundle, lambda);
  const double ratio = std::log2(start / res.constants.eps);
  EXPECT_NEAR(ratio, std::round(ratio), 1e-9);
  // The final margin is measured on the output grid.
  EXPECT_DOUBLE_EQ(rep.margin, interiority_margin(s.ctx.field, res.constants.eps, res.x));
}
