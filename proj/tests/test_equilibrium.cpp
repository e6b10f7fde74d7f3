#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tic/equilibrium.hpp"
#include "tic/regulator.hpp"

using namespace tic;

namespace {

const RegulatorParams kReg{};
const ProblemSpec kSpec = regulator_problem(kReg);

FeedbackControl constant(double u) { return FeedbackControl::constant({u}); }

SimConfig cfg(std::size_t paths, double dt = 0.025, std::uint64_t seed = 3) {
  SimConfig c;
  c.n_paths = paths;
  c.dt = dt;
  c.seed = seed;
  return c;
}

EquilibriumTestPlan small_plan() {
  EquilibriumTestPlan p;
  p.points = {{0.0, {0.0}}, {0.5, {1.0}}};
  p.deviations = {{"1", constant(1.0)}, {"-0.5", constant(-0.5)}};
  p.h = {0.2, 0.1, 0.05};
  p.radii = {2.5};
  p.cfg = cfg(20000);
  return p;
}

}  // namespace

TEST(AffineFit, RecoversExactLine) {
  const Vec h{0.4, 0.2, 0.1, 0.05};
  Vec q;
  for (double x : h) q.push_back(1.5 - 2.0 * x);
  const AffineFit f = fit_affine(h, q, Vec{0.1, 0.1, 0.2, 0.3});
  ASSERT_TRUE(f.ok);
  EXPECT_NEAR(f.intercept, 1.5, 1e-12);
  EXPECT_NEAR(f.slope, -2.0, 1e-12);
}

TEST(AffineFit, WeightedAgainstHandComputation) {
  // Weighted normal equations with w = 1 / se^2, solved by hand.
  const Vec h{1.0, 2.0, 3.0}, q{1.0, 3.0, 2.0}, se{1.0, 1.0, 0.5};
  const double w[3] = {1.0, 1.0, 4.0};
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < 3; ++i) {
    sw += w[i];
    sx += w[i] * h[i];
    sy += w[i] * q[i];
    sxx += w[i] * h[i] * h[i];
    sxy += w[i] * h[i] * q[i];
  }
  const double det = sw * sxx - sx * sx;
  const double slope = (sw * sxy - sx * sy) / det;
  const double intercept = (sy - slope * sx) / sw;
  const AffineFit f = fit_affine(h, q, se);
  ASSERT_TRUE(f.ok);
  EXPECT_TRUE(f.weighted);
  EXPECT_NEAR(f.intercept, intercept, 1e-12);
  EXPECT_NEAR(f.slope, slope, 1e-12);
  // Unscaled intercept variance is sxx / det; the reduced chi^2 can only inflate it.
  EXPECT_GE(f.intercept_stderr, std::sqrt(sxx / det) - 1e-12);
}

TEST(AffineFit, RefusesFewerThanThreePoints) {
  EXPECT_FALSE(fit_affine(Vec{0.2, 0.1}, Vec{1.0, 1.0}, Vec{0.1, 0.1}).ok);
}

TEST(Quotient, IdenticalControlsGiveExactZero) {
  const Estimate q = deviation_quotient(kSpec, constant(0.5), constant(0.5), {0.0, {0.0}}, 0.1, 2.5, cfg(1000));
  EXPECT_EQ(q.value(), 0.0);
  EXPECT_EQ(q.error(), 0.0);
}

TEST(Quotient, MatchesGaussianOracle) {
  // J(spike) = u^4 h^2 + sigma^2 (T - t), so the quotient is -u^4 h.
  for (double h : {0.1, 0.05}) {
    const Estimate q = deviation_quotient(kSpec, constant(0.0), constant(1.0), {0.0, {0.0}}, h, 5.0, cfg(40000));
    EXPECT_LE(std::abs(q.value() + h), 4 * q.error()) << "h = " << h << ": " << q.value() << " +/- " << q.error();
  }
}

TEST(Quotient, SwappingRolesNegatesExactly) {
  const SimConfig c = cfg(3000);
  const Vec x{0.0};
  const PathSummary a = summarize_paths(kSpec, constant(0.0), 0.0, x, 0.0, x, c);
  const PathSummary b = summarize_paths(kSpec, spike_control(constant(0.0), constant(1.0), 0.0, 0.1, 2.5, x), 0.0, x,
                                        0.0, x, c);
  const Estimate ab = paired_difference(kSpec, 0.0, x, a, b, c);
  const Estimate ba = paired_difference(kSpec, 0.0, x, b, a, c);
  EXPECT_EQ(ab.value(), -ba.value());
  EXPECT_EQ(ab.error(), ba.error());
}

TEST(Quotient, LargeRadiiAgree) {
  const SimConfig c = cfg(20000);
  const Estimate r1 = deviation_quotient(kSpec, constant(0.0), constant(1.0), {0.5, {1.0}}, 0.1, 10 * 0.5 * std::sqrt(0.1), c);
  const Estimate r2 = deviation_quotient(kSpec, constant(0.0), constant(1.0), {0.5, {1.0}}, 0.1, 5.0, c);
  EXPECT_LE(std::abs(r1.value() - r2.value()), 2 * std::hypot(r1.error(), r2.error()) + 1e-15);
}

TEST(Plan, RejectsInvalidPlans) {
  EquilibriumTestPlan p = small_plan();
  p.h = {0.1, 0.2, 0.05};
  EXPECT_THROW(p.check(kSpec), DomainError);
  p = small_plan();
  p.points.push_back({0.9, {0.0}});
  EXPECT_THROW(p.check(kSpec), DomainError);
  p = small_plan();
  p.deviations.push_back({"2", constant(2.0)});
  EXPECT_THROW(p.check(kSpec), DomainError);
  p = small_plan();
  p.radii = {0.0};
  EXPECT_THROW(p.check(kSpec), DomainError);
  EXPECT_THROW(equilibrium_test(kSpec, constant(0.0), p), DomainError);
}

TEST(EquilibriumTest, ClosedFormEquilibriumPasses) {
  const EquilibriumTestPlan p = small_plan();
  const EquilibriumReport r = equilibrium_test(kSpec, constant(0.0), p);
  ASSERT_EQ(r.entries.size(), 4u);
  for (const auto& e : r.entries) {
    EXPECT_EQ(e.rows.size(), 3u);
    EXPECT_LE(std::abs(e.fit.intercept), e.tol_stat);
    EXPECT_EQ(e.verdict, Verdict::Pass);
  }
  EXPECT_EQ(r.overall, Verdict::Pass);
}

TEST(EquilibriumTest, TwoStepSequenceIsInconclusive) {
  EquilibriumTestPlan p = small_plan();
  p.h = {0.2, 0.1};
  p.cfg = cfg(2000);
  const EquilibriumReport r = equilibrium_test(kSpec, constant(0.0), p);
  for (const auto& e : r.entries) {
    EXPECT_FALSE(e.fit.ok);
    EXPECT_EQ(e.verdict, Verdict::Inconclusive);
  }
  EXPECT_EQ(r.overall, Verdict::Inconclusive);
}

TEST(EquilibriumTest, DetectsProfitableDeviation) {
  // With F = -(x - y)^2, dropping the drift of u = 1 for a time h raises J
  // by (2T - h) h, so u = 1 is not an equilibrium.
  ProblemSpec s = kSpec;
  s.payoffs.terminal = [](double, ConstSpan x, ConstSpan y) { return -(x[0] - y[0]) * (x[0] - y[0]); };
  EquilibriumTestPlan p;
  p.points = {{0.0, {0.0}}};
  p.deviations = {{"0", constant(0.0)}};
  p.h = {0.2, 0.1, 0.05, 0.025};
  p.radii = {2.5};
  p.cfg = cfg(20000);
  // Quotient -(2T - h), intercept -2T.
  const EquilibriumReport r = equilibrium_test(s, constant(1.0), p);
  const auto& e = r.entries.front();
  EXPECT_NEAR(e.fit.intercept, -2.0, 4 * e.fit.intercept_stderr + 1e-9);
  EXPECT_EQ(e.verdict, Verdict::Fail);
  EXPECT_EQ(r.overall, Verdict::Fail);
}

TEST(EquilibriumTest, SeedsDependOnlyOnPointAndStep) {
  EXPECT_EQ(plan_seed(5, 1, 2), plan_seed(5, 1, 2));
  EXPECT_NE(plan_seed(5, 1, 2), plan_seed(5, 2, 1));
  EXPECT_NE(plan_seed(5, 1, 2), plan_seed(6, 1, 2));
}

TEST(EquilibriumReport, CsvHasOneRowPerCell) {
  EquilibriumTestPlan p = small_plan();
  p.cfg = cfg(500);
  const EquilibriumReport r = equilibrium_test(kSpec, constant(0.0), p);
  std::ostringstream os;
  r.write_csv(os);
  const std::string s = os.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 1 + 2 * 2 * 1 * 3);
}
