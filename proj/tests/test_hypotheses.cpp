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

#include "tightening/hypotheses.hpp"

using namespace tightening;

namespace {

Vec scalar(double v) { return Vec::Constant(1, v); }

TimeGrid grid(double T = 2.0, double h = 0.01) { return TimeGrid::uniform(0.0, T, h); }

DynamicsModel pure_control() { return make_control_affine({"0"}, {{"1"}}); }

HypothesisBundle inward_bundle(double m_u, double xi) {
  HypothesisBundle b;
  b.grid = grid();
  b.M_u = m_u;
  b.xi = xi;
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// Growth envelope.

TEST(CertifySublinear, PureControlRatioApproachesOne) {
  const auto cert = certify_sublinear(pure_control(), grid(), 3.0, 100.0);
  for (double v : cert.values) {
    // sup |u| / (1 + |x| + |u|) over |u| <= 100 is 100/101, inflated by 1.1.
    EXPECT_GE(v, 1.1 * 100.0 / 101.0 - 1e-12);
    EXPECT_LE(v, 1.1);
  }
  EXPECT_EQ(cert.provenance, Provenance::certified);
}

TEST(CertifySublinear, SurgeUsesDeclaredEnvelopeGainPlusDriftBound) {
  const auto m = make_motor_surge();
  const auto g = grid();
  const auto cert = certify_sublinear(m, g, 4.0, 3.0);
  EXPECT_EQ(cert.provenance, Provenance::declared);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = g[i];
    const double gain = t <= 1.0 ? 1.0 : std::pow(std::max(t - 1.0, 5e-4), -0.25);
    EXPECT_DOUBLE_EQ(cert.values[i], gain + 0.2);
  }
}

TEST(CertifySublinear, SquaredControlIsRejected) {
  DynamicsModel m;
  m.name = "square";
  m.state_dim = 1;
  m.control_dim = 1;
  m.rhs = [](double, const Vec&, const Vec& u) { return Vec(u.array().square()); };
  try {
    certify_sublinear(m, grid(), 2.0, 2.0);
    FAIL() << "super-linear growth certified";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::certification);
    EXPECT_FALSE(e.witness().empty());
  }
}

TEST(CertifySublinear, DeclaredEnvelopeBelowSamplesIsRejected) {
  auto m = pure_control();
  m.declared.theta = [](double) { return 0.5; };
  EXPECT_THROW(certify_sublinear(m, grid(), 1.0, 10.0), Error);
}

// ---------------------------------------------------------------------------
// Lipschitz modulus.

TEST(CertifyLipschitz, StateIndependentFieldHasZeroModulus) {
  const auto cert = certify_lipschitz(make_control_affine({"sin(t)"}, {{"2"}}), grid(), 50.0, 3.0);
  for (double v : cert.values) EXPECT_EQ(v, 0.0);
}

TEST(CertifyLipschitz, CosineDriftGivesPointTwo) {
  const auto cert = certify_lipschitz(make_motor_surge(), grid(), 10.0, 3.0);
  for (double v : cert.values) {
    EXPECT_LE(v, 1.1 * 0.2 * (1.0 + 1e-6));
    EXPECT_GE(v, 1.1 * 0.2 * 0.98);
  }
}

TEST(CertifyLipschitz, ControlAffineWithinProductBound) {
  // a = 0.3 sin(x), b = 0.1 cos(x): both 0.3-Lipschitz, so k_f <= 0.3 (1 + U).
  const double U = 2.0;
  const auto cert = certify_lipschitz(make_control_affine({"0.3*sin(x1)"}, {{"0.1*cos(x1)"}}), grid(), 5.0, U);
  for (double v : cert.values) EXPECT_LE(v / 1.1, 0.3 * (1.0 + U) + 1e-9);
}

TEST(CertifyLipschitz, SquareRootKinkIsUnbounded) {
  const auto m = make_control_affine({"sqrt(abs(x1))"}, {{"1"}});
  EXPECT_THROW(certify_lipschitz(m, grid(), 1.0, 1.0), Error);
}

// ---------------------------------------------------------------------------
// Inward-pointing condition.

TEST(CertifyInward, SurgeCertifiesUnitXiWithTwoUnitsOfControl) {
  const auto m = make_motor_surge();
  const auto f = unit_ball_complement(1, 4.0);
  const auto cert = certify_inward_pointing(f, m, {0.1, 0.05}, 4.0, 2.0);
  EXPECT_EQ(cert.M_u, 2.0);
  EXPECT_EQ(cert.xi, 1.0);
  EXPECT_GT(cert.eta, 0.0);
  // |v| <= |a| + M_u * sup gain, the gain peaking at the floor 5e-4.
  EXPECT_LE(cert.M_v, 0.2 + 2.0 * std::pow(5e-4, -0.25) + 1e-12);
  EXPECT_GE(cert.M_v, 2.0 * std::pow(5e-4, -0.25) - 0.2);
}

TEST(CertifyInward, InactiveConstraintPassesVacuouslyAtTheCap) {
  Vec c(1);
  c << 1.0;
  const auto f = half_plane(c, 100.0, Box::cube(1, 4.0));
  InwardOptions opt;
  const auto cert = certify_inward_pointing(f, make_motor_surge(), {0.1}, 4.0, 2.0, opt);
  EXPECT_EQ(cert.xi, opt.xi_max);
}

TEST(CertifyInward, DoubleIntegratorPositionConstraintFails) {
  // x1 >= 0 with x1' = x2, x2' = u: the control cannot move x1 instantly.
  const auto m = make_control_affine({"x2", "0"}, {{"0"}, {"1"}});
  const auto f = expression_field({"-x1"}, 2, Box::cube(2, 2.0));
  try {
    certify_inward_pointing(f, m, {0.1}, 2.0, 1.0);
    FAIL() << "order-2 constraint certified";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::certification);
    EXPECT_FALSE(e.witness().empty());
  }
}

TEST(InwardControlAt, PushesOutwardOnPositiveSide) {
  const auto m = make_motor_surge();
  const auto f = unit_ball_complement(1, 4.0);
  const double eps = 0.1;
  const auto c = inward_control_at(inward_bundle(2.0, 1.0), f, m, eps, 0.5, scalar(1.0 + eps));
  EXPECT_EQ(c.u[0], 2.0);
  EXPECT_GT(c.v[0], 0.0);
  EXPECT_DOUBLE_EQ(c.v[0], 0.2 * std::cos(1.0 + eps) + 2.0);
}

TEST(InwardControlAt, MirrorsOnNegativeSide) {
  const auto f = unit_ball_complement(1, 4.0);
  const auto c = inward_control_at(inward_bundle(2.0, 1.0), f, make_motor_surge(), 0.1, 0.5, scalar(-1.1));
  EXPECT_EQ(c.u[0], -2.0);
  EXPECT_LT(c.v[0], 0.0);
}

TEST(InwardControlAt, InteriorPointStillReturnsAControl) {
  const auto f = unit_ball_complement(1, 4.0);
  const auto c = inward_control_at(inward_bundle(2.0, 1.0), f, make_motor_surge(), 0.1, 0.5, scalar(3.0));
  EXPECT_EQ(c.u.size(), 1);
  EXPECT_LE(c.u.norm(), 2.0);
}

// ---------------------------------------------------------------------------
// Time regularity and Hoelder selection.

TEST(CertifyTimeRegularity, TimeInvariantFieldIsConstantInTime) {
  const auto g = grid(1.0, 0.02);
  const auto ubar = ControlSignal::constant(g, scalar(0.5));
  const auto reg = certify_time_regularity(make_control_affine({"0.2*cos(x1)"}, {{"1"}}), ubar, g, 3.0, 2.0);
  for (double v : reg.gamma) EXPECT_EQ(v, 0.0);
  for (double v : reg.beta_u) EXPECT_EQ(v, 0.0);
  EXPECT_FALSE(reg.alpha.has_value());
}

TEST(CertifyTimeRegularity, SurgeHasQuarterExponentAndDeclaredGain) {
  const auto g = grid(2.0, 0.01);
  const auto ubar = ControlSignal::constant(g, scalar(0.3));
  const auto reg = certify_time_regularity(make_motor_surge(), ubar, g, 4.0, 2.0);
  ASSERT_TRUE(reg.alpha.has_value());
  EXPECT_EQ(*reg.alpha, 0.25);
  EXPECT_EQ(reg.ku_provenance, Provenance::declared);
  for (double v : reg.gamma) EXPECT_EQ(v, 0.0);
  for (std::size_t i = 0; i + 1 < g.size(); ++i) {
    const double s = g[i];
    if (s == 1.0) continue;
    EXPECT_LE(reg.ku_sampled[i], 1.1 * (2.0 + 0.3) / std::pow(std::abs(1.0 - s), 0.25)) << "s=" << s;
  }
}

TEST(CertifyTimeRegularity, DeclineKeepsControlsWithinGammaBudget) {
  const auto g = grid(2.0, 0.01);
  const auto ubar = ControlSignal::constant(g, scalar(-0.4));
  const auto reg = certify_time_regularity(make_motor_decline(), ubar, g, 4.0, 2.0);
  EXPECT_EQ(reg.gamma_provenance, Provenance::declared);
  for (double v : reg.beta_u) EXPECT_EQ(v, 0.0);
  EXPECT_LE(reg.worst_residual_ratio, 1.0);
  EXPECT_GT(reg.worst_residual_ratio, 0.0);
}

TEST(CertifyTimeRegularity, UnitScaleDeclineDensityIsRejected) {
  MotorParams p;
  p.gamma_scale = 1.0;
  const auto g = grid(2.0, 0.01);
  const auto ubar = ControlSignal::constant(g, scalar(0.0));
  EXPECT_THROW(certify_time_regularity(make_motor_decline(p), ubar, g, 4.0, 4.0), Error);
}

// ---------------------------------------------------------------------------
// Bundle assembly.

TEST(HypothesisBundle, RequireCompleteNamesTheMissingConstant) {
  HypothesisBundle b;
  b.grid = grid();
  const std::size_t n = b.grid.size();
  b.theta = b.kf = b.gamma = b.beta_u = std::vector<double>(n, 0.0);
  b.M_u = b.M_v = 1.0;
  b.xi = b.eta = b.eps0 = 0.5;
  try {
    b.require_complete();
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("delta0"), std::string::npos);
  }
  b.delta0 = 0.5;
  EXPECT_NO_THROW(b.require_complete());
}

TEST(StabilityPass, FinerSampleAboveIssuedValueDemotes) {
  HypothesisBundle b;
  b.grid = grid(1.0, 0.5);
  const std::vector<double> issued{1.0, 1.0, 1.0};
  CertifyOptions co;
  auto finer = [&](double raw) {
    return [raw](const CertifyOptions& o) {
      EnvelopeCertificate c;
      c.values.assign(3, raw * o.safety);
      return c;
    };
  };
  detail::stability_pass(b, "theta", issued, finer(0.99), co);
  EXPECT_EQ(b.provenance.count("theta"), 0u);
  detail::stability_pass(b, "theta", issued, finer(1.05), co);
  EXPECT_EQ(b.provenance.at("theta"), Provenance::declared_only);
  EXPECT_TRUE(b.partial());
}

TEST(StabilityPass, FailingReRunDemotes) {
  HypothesisBundle b;
  b.grid = grid(1.0, 0.5);
  detail::stability_pass(
      b, "kf", {1.0, 1.0, 1.0},
      [](const CertifyOptions&) -> EnvelopeCertificate { throw Error(ErrorKind::certification, "diverges"); }, {});
  EXPECT_EQ(b.provenance.at("kf"), Provenance::declared_only);
}

TEST(EpsForLambda, PicksLargestTabulatedLambdaBelow) {
  HypothesisBundle b;
  b.eps0 = 0.25;
  b.lambda_to_eps = {{0.4, 0.25}, {0.2, 0.2}, {0.1, 0.1}, {0.05, 0.05}};
  EXPECT_EQ(eps_for_lambda(b, 0.4), 0.25);
  EXPECT_EQ(eps_for_lambda(b, 0.15), 0.1);
  EXPECT_EQ(eps_for_lambda(b, 1.0), 0.25);
  EXPECT_DOUBLE_EQ(eps_for_lambda(b, 0.01), 0.01);
}

TEST(CertifyBundle, SurgeBundleIsCompleteAndFullyCertified) {
  const auto m = make_motor_surge();
  const auto f = unit_ball_complement(1, 4.0);
  const auto g = TimeGrid::uniform(0.0, 2.0, 0.01);
  const auto ubar = ControlSignal::constant(g, scalar(0.5));
  const auto xbar = integrate(m, ubar, scalar(1.5), 0.0, 2.0, IntegratorConfig{0.01, false, 1e-6});
  const auto b = certify_bundle(m, f, xbar, ubar, g);
  EXPECT_NO_THROW(b.require_complete());
  EXPECT_FALSE(b.partial());
  EXPECT_EQ(b.M_u, 2.0);
  EXPECT_EQ(b.xi, 1.0);
  ASSERT_TRUE(b.alpha.has_value());
  EXPECT_EQ(*b.alpha, 0.25);
  EXPECT_DOUBLE_EQ(b.box_radius, 1.0 + 2.0 * xbar.sup_norm());
  // A_0 sets here are |x| >= 1; the nearest point of |x| >= 1 + eps is eps away.
  for (const auto& [lam, eps] : b.lambda_to_eps) EXPECT_NEAR(eps, std::min(lam, 0.25), 1e-6 * lam);
}
