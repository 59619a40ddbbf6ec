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
#include <random>
#include <sstream>

#include "tightening/signals.hpp"

using namespace tightening;

namespace {

Vec scalar(double v) { return Vec::Constant(1, v); }

/// Running-sum max over all grid windows, written independently of the library scan.
double brute_window_integral(const std::vector<double>& t, const std::vector<double>& f, double delta) {
  double best = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = i + 1; j < t.size() && t[j] - t[i] <= delta + 1e-11; ++j) {
      acc += 0.5 * (f[j] + f[j - 1]) * (t[j] - t[j - 1]);
      best = std::max(best, acc);
    }
  }
  return best;
}

}  // namespace

TEST(TimeGrid, UniformNodesAndStep) {
  auto g = TimeGrid::uniform(0.0, 2.0, 0.001);
  EXPECT_EQ(g.size(), 2001u);
  EXPECT_DOUBLE_EQ(g.t0(), 0.0);
  EXPECT_DOUBLE_EQ(g.t1(), 2.0);
  EXPECT_DOUBLE_EQ(g[1000], 1.0);
}

TEST(TimeGrid, RejectsNonIncreasingAndOversizedGaps) {
  EXPECT_THROW(TimeGrid({0.0, 1.0, 1.0}), Error);
  EXPECT_THROW(TimeGrid({0.0, 1.0, 3.0}, 1.5), Error);
  EXPECT_NO_THROW(TimeGrid({0.0, 1.0, 2.5}, 1.5));
}

TEST(TimeGrid, MergedKeepsExistingNodesAndDropsOutsiders) {
  auto g = TimeGrid::uniform(0.0, 1.0, 0.25);
  const std::vector<double> extra{0.25 + 1e-13, 0.3, -1.0, 7.0};
  auto m = g.merged(extra);
  EXPECT_EQ(m.size(), 6u);
  EXPECT_EQ(m[1], 0.25);
  EXPECT_EQ(m[2], 0.3);
}

TEST(EvalControl, ConstantSignal) {
  auto u = ControlSignal::constant(TimeGrid::uniform(0.0, 2.0, 0.5), scalar(2.0));
  for (double t : {0.0, 0.3, 1.7, 2.0}) EXPECT_DOUBLE_EQ(eval_control(u, t)[0], 2.0);
}

TEST(EvalControl, LeftConstantRuleAndEndpoint) {
  ControlSignal u(TimeGrid({0.0, 1.0, 2.0}), {scalar(10.0), scalar(20.0), scalar(30.0)});
  EXPECT_DOUBLE_EQ(eval_control(u, 1.5)[0], 20.0);
  EXPECT_DOUBLE_EQ(eval_control(u, 1.0)[0], 20.0);
  EXPECT_DOUBLE_EQ(eval_control(u, 0.999)[0], 10.0);
  EXPECT_DOUBLE_EQ(eval_control(u, 2.0)[0], 30.0);
}

TEST(EvalControl, OutsideDomainIsDomainError) {
  ControlSignal u(TimeGrid({0.0, 1.0, 2.0}), {scalar(1.0), scalar(2.0), scalar(3.0)});
  try {
    eval_control(u, 2.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::domain);
  }
  EXPECT_THROW(eval_control(u, -0.1), Error);
}

TEST(SupWindowModulus, ZeroIntegrand) {
  auto g = TimeGrid::uniform(0.0, 2.0, 0.01);
  std::vector<double> f(g.size(), 0.0);
  EXPECT_EQ(sup_window_modulus(g, f, 0.7, WindowMode::integral_sup), 0.0);
}

TEST(SupWindowModulus, ConstantIntegrandEqualsWidth) {
  auto g = TimeGrid::uniform(0.0, 2.0, 0.01);
  std::vector<double> f(g.size(), 1.0);
  EXPECT_NEAR(sup_window_modulus(g, f, 0.5, WindowMode::integral_sup), 0.5, 1e-12);
}

TEST(SupWindowModulus, NegativeDeltaIsDomainError) {
  auto g = TimeGrid::uniform(0.0, 1.0, 0.1);
  std::vector<double> f(g.size(), 1.0);
  EXPECT_THROW(sup_window_modulus(g, f, -0.1, WindowMode::integral_sup), Error);
}

TEST(SupWindowModulus, SqrtSingularDensityMatchesExhaustiveScan) {
  // gamma(s) = 1 / (4 sqrt(s - 1)) on (1, 2], 0 before; step 1e-4.
  auto g = TimeGrid::uniform(0.0, 2.0, 1e-4);
  std::vector<double> f(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) f[i] = g[i] > 1.0 ? 0.25 / std::sqrt(g[i] - 1.0) : 0.0;
  const double oracle = brute_window_integral(g.nodes(), f, 0.25);
  EXPECT_NEAR(sup_window_modulus(g, f, 0.25, WindowMode::integral_sup), oracle, 1e-12);
  // The continuous sup is sqrt(0.25) / 2; the grid value sits near it.
  EXPECT_NEAR(oracle, 0.25, 5e-3);
  auto table = modulus_table(g, f, 0.25, WindowMode::integral_sup);
  EXPECT_NEAR(table(0.25), oracle, 1e-12);
}

TEST(SupWindowModulus, VariationModeAndMonotoneInDelta) {
  auto g = TimeGrid::uniform(0.0, 1.0, 0.01);
  std::vector<double> f(g.size());
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (auto& v : f) v = d(rng);
  double prev = 0.0;
  for (double delta = 0.0; delta <= 1.0; delta += 0.05) {
    const double v = sup_window_modulus(g, f, delta, WindowMode::variation_sup);
    EXPECT_GE(v, prev);
    prev = v;
  }
  auto table = modulus_table(g, f, 0.5, WindowMode::variation_sup);
  for (std::size_t k = 1; k < table.values().size(); ++k) EXPECT_GE(table.values()[k], table.values()[k - 1]);
  EXPECT_EQ(table(0.0), 0.0);
}

TEST(ModulusTable, RejectsBadTables) {
  EXPECT_THROW(ModulusTable({0.0, 1.0}, {0.1, 0.2}), Error);
  EXPECT_THROW(ModulusTable({0.0, 1.0}, {0.0, -0.2}), Error);
  ModulusTable t({0.0, 1.0, 2.0}, {0.0, 1.0, 3.0});
  EXPECT_DOUBLE_EQ(t(1.5), 2.0);
  EXPECT_DOUBLE_EQ(t(5.0), 3.0);
}

TEST(LinfDistance, IdentityAndConstantOffset) {
  auto g = TimeGrid::uniform(0.0, 1.0, 0.1);
  std::vector<Vec> a, b;
  Vec c(2);
  c << 0.3, -0.4;
  for (double t : g.nodes()) {
    Vec x(2);
    x << std::sin(t), t * t;
    a.push_back(x);
    b.push_back(x + c);
  }
  Trajectory ta(g, a), tb(g, b);
  EXPECT_EQ(linf_distance(ta, ta), 0.0);
  EXPECT_NEAR(linf_distance(ta, tb), 0.5, 1e-15);
}

TEST(LinfDistance, DimensionMismatchIsShapeError) {
  auto g = TimeGrid::uniform(0.0, 1.0, 0.5);
  Trajectory a(g, std::vector<Vec>(g.size(), Vec::Zero(1)));
  Trajectory b(g, std::vector<Vec>(g.size(), Vec::Zero(2)));
  try {
    linf_distance(a, b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(LinfDistance, TriangleInequalityOnRandomTriples) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  auto g = TimeGrid::uniform(0.0, 1.0, 0.05);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec> a, b, c;
    for (std::size_t i = 0; i < g.size(); ++i) {
      a.push_back(Vec::NullaryExpr(3, [&](Eigen::Index) { return d(rng); }));
      b.push_back(Vec::NullaryExpr(3, [&](Eigen::Index) { return d(rng); }));
      c.push_back(Vec::NullaryExpr(3, [&](Eigen::Index) { return d(rng); }));
    }
    Trajectory ta(g, a), tb(g, b), tc(g, c);
    EXPECT_LE(linf_distance(ta, tc), linf_distance(ta, tb) + linf_distance(tb, tc) + 1e-14);
  }
}

TEST(WeightedL2Cost, ZeroControlAndUnitWeight) {
  auto g = TimeGrid::uniform(0.0, 2.0, 0.1);
  auto id = constant_weight(Mat::Identity(1, 1));
  EXPECT_EQ(weighted_l2_cost(ControlSignal::constant(g, scalar(0.0)), id), 0.0);
  EXPECT_NEAR(weighted_l2_cost(ControlSignal::constant(g, scalar(1.0)), id), 2.0, 1e-14);
}

TEST(WeightedL2Cost, LinearRampWeightIsExact) {
  auto g = TimeGrid::uniform(0.0, 1.0, 0.1);
  WeightFn ramp = [](double t) { return Mat::Identity(1, 1) * (1.0 + t); };
  EXPECT_NEAR(weighted_l2_cost(ControlSignal::constant(g, scalar(1.0)), ramp), 1.5, 1e-14);
}

TEST(WeightedL2Cost, NonPsdWeightIsValidationError) {
  auto g = TimeGrid::uniform(0.0, 1.0, 0.1);
  WeightFn bad = [](double) { return Mat::Identity(1, 1) * -1.0; };
  try {
    weighted_l2_cost(ControlSignal::constant(g, scalar(1.0)), bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
}

TEST(WeightedL2Cost, InvariantUnderRefinement) {
  ControlSignal u(TimeGrid({0.0, 0.3, 1.1, 2.0}), {scalar(1.0), scalar(-2.0), scalar(0.5), scalar(0.5)});
  WeightFn ramp = [](double t) { return Mat::Identity(1, 1) * (2.0 + t); };
  const std::vector<double> extra{0.1, 0.2, 0.7, 1.5, 1.9};
  EXPECT_NEAR(weighted_l2_cost(u, ramp), weighted_l2_cost(u.refined(extra), ramp), 1e-13);
}

TEST(Csv, RoundTripIsBitwise) {
  auto g = TimeGrid({0.0, 0.1, 0.30000000000000004, 1.0});
  std::vector<Vec> xs;
  for (double t : g.nodes()) {
    Vec x(2);
    x << std::exp(t) / 3.0, -t / 7.0;
    xs.push_back(x);
  }
  Trajectory x(g, xs);
  std::stringstream ss;
  write_csv(ss, x);
  EXPECT_EQ(ss.str().substr(0, 8), "t,x1,x2\n");
  auto back = read_trajectory_csv(ss);
  ASSERT_EQ(back.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(back.time(i), x.time(i));
    EXPECT_EQ(back.state(i)[0], x.state(i)[0]);
    EXPECT_EQ(back.state(i)[1], x.state(i)[1]);
  }
}

TEST(Csv, MalformedNumberNamesLine) {
  std::stringstream ss("t,u1\n0,1\n0.5,abc\n");
  try {
    read_control_csv(ss);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}
