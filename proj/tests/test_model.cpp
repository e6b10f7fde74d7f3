#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "tic/registry.hpp"
#include "tic/regulator.hpp"

using namespace tic;

namespace {

ProblemSpec regulator() { return regulator_problem(RegulatorParams{}); }

ProblemSpec with_aggregator(PayoffFn G, PayoffGradFn Gy) {
  ProblemSpec s = regulator();
  s.payoffs.aggregator = std::move(G);
  s.payoffs.aggregator_grad = std::move(Gy);
  return s;
}

}  // namespace

TEST(ControlSet, IntervalSamplesIncludeVerticesAndStayInside) {
  const ControlSet u = ControlSet::interval_box({-1.0, 0.0}, {1.0, 2.0}, 5);
  ASSERT_EQ(u.samples().size(), 25u);
  int vertices = 0;
  for (const Vec& s : u.samples()) {
    EXPECT_TRUE(u.contains(s));
    if (std::abs(std::abs(s[0]) - 1.0) < 1e-15 && (s[1] == 0.0 || s[1] == 2.0)) ++vertices;
  }
  EXPECT_EQ(vertices, 4);
}

TEST(ControlSet, SamplesOrderedByNormThenLexicographic) {
  const ControlSet u = ControlSet::interval_box({-1.0}, {1.0}, 5);
  const auto& s = u.samples();
  EXPECT_EQ(s[0][0], 0.0);
  EXPECT_EQ(s[1][0], -0.5);
  EXPECT_EQ(s[2][0], 0.5);
  EXPECT_EQ(u.minimal_norm_element()[0], 0.0);
}

TEST(ControlSet, InvertedBoxIsNotCompact) {
  const ControlSet u = ControlSet::interval_box({1.0}, {-1.0}, 5);
  EXPECT_TRUE(u.compactness_violation().has_value());
  EXPECT_TRUE(u.samples().empty());
}

TEST(ControlSet, FiniteSetMembership) {
  const ControlSet u = ControlSet::finite_set({{0.5}, {-0.25}});
  EXPECT_TRUE(u.contains(Vec{0.5}));
  EXPECT_FALSE(u.contains(Vec{0.0}));
  EXPECT_EQ(u.minimal_norm_element()[0], -0.25);
}

TEST(Validate, RegulatorPassesEveryCheck) {
  const ValidationReport r = validate_problem(regulator(), 500, 3);
  for (const auto& c : r.checks) {
    EXPECT_TRUE(c.status == CheckStatus::Pass || c.status == CheckStatus::Skipped) << c.name << ": " << c.detail;
  }
  EXPECT_TRUE(r.all_pass());
}

TEST(Validate, ZeroDiffusionFailsEllipticity) {
  ProblemSpec s = regulator_problem(RegulatorParams{1.0, 0.0});
  s.dynamics.ellipticity_floor = 0.1;
  const ValidationReport r = validate_problem(s, 200, 1);
  ASSERT_NE(r.find("ellipticity"), nullptr);
  EXPECT_EQ(r.find("ellipticity")->status, CheckStatus::Fail);
  EXPECT_FALSE(r.all_pass());
}

TEST(Validate, DeterministicForFixedSeed) {
  const ValidationReport a = validate_problem(regulator(), 300, 42);
  const ValidationReport b = validate_problem(regulator(), 300, 42);
  ASSERT_EQ(a.checks.size(), b.checks.size());
  for (std::size_t i = 0; i < a.checks.size(); ++i) {
    EXPECT_EQ(a.checks[i].worst, b.checks[i].worst);
    EXPECT_EQ(a.checks[i].status, b.checks[i].status);
  }
}

TEST(Validate, GradientCheckAcceptsCorrectDerivative) {
  const auto s = with_aggregator([](double, ConstSpan, ConstSpan y) { return y[0] * y[0]; },
                                 [](double, ConstSpan, ConstSpan y, MutSpan g) { g[0] = 2 * y[0]; });
  const auto* c = validate_problem(s, 500, 5).find("aggregator_gradient");
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->status, CheckStatus::Pass);
  EXPECT_LE(c->worst, 1e-5);
}

TEST(Validate, GradientCheckRejectsWrongDerivative) {
  const auto s = with_aggregator([](double, ConstSpan, ConstSpan y) { return y[0] * y[0]; },
                                 [](double, ConstSpan, ConstSpan y, MutSpan g) { g[0] = 3 * y[0]; });
  const auto* c = validate_problem(s, 500, 5).find("aggregator_gradient");
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->status, CheckStatus::Fail);
  // |3y - 2y| / max(1, |2y|) approaches 1/2 for large |y|.
  EXPECT_GT(c->worst, 0.4);
  EXPECT_LE(c->worst, 0.5 + 1e-6);
}

TEST(Validate, ThrowingMapIsUnevaluable) {
  ProblemSpec s = regulator();
  s.dynamics.drift = [](double, ConstSpan, ConstSpan, MutSpan) { throw std::runtime_error("boom"); };
  ValidationReport r;
  EXPECT_NO_THROW(r = validate_problem(s, 50, 1));
  ASSERT_NE(r.find("drift_bounded"), nullptr);
  EXPECT_EQ(r.find("drift_bounded")->status, CheckStatus::Unevaluable);
}

TEST(Validate, UnderstatedBoundFails) {
  ProblemSpec s = regulator();
  s.dynamics.drift_bound = 0.5;
  const ValidationReport r = validate_problem(s, 500, 1);
  EXPECT_EQ(r.find("drift_bounded")->status, CheckStatus::Fail);
}

TEST(Structure, RejectsNonPositiveHorizon) {
  ProblemSpec s = regulator();
  s.horizon = 0.0;
  EXPECT_THROW(s.check_structure(), InputError);
}

TEST(ValueTerms, RegulatorPayoff) {
  const ProblemSpec s = regulator();
  const ValueTerms v = evaluate_value_terms(s, 0.0, Vec{2.0}, Vec{1.0}, 1.0, Vec{0.0});
  EXPECT_DOUBLE_EQ(v.F, 1.0);
  EXPECT_DOUBLE_EQ(v.G, 0.0);
  EXPECT_FALSE(v.H.has_value());
  EXPECT_DOUBLE_EQ(evaluate_value_terms(s, 0.3, Vec{0.7}, Vec{0.7}, 1.0, Vec{0.5}).F, 0.0);
}

TEST(ValueTerms, ProductAggregator) {
  const auto s = with_aggregator([](double, ConstSpan x, ConstSpan y) { return x[0] * y[0]; },
                                 [](double, ConstSpan x, ConstSpan, MutSpan g) { g[0] = x[0]; });
  const ValueTerms v = evaluate_value_terms(s, 0.0, Vec{3.0}, Vec{5.0}, 1.0, Vec{0.0});
  EXPECT_DOUBLE_EQ(v.G, 15.0);
  EXPECT_DOUBLE_EQ(v.Gy.at(0), 3.0);
}

TEST(ValueTerms, RunningPayoffPresentOnlyWhenDeclared) {
  ProblemSpec s = regulator();
  s.payoffs.running = quadratic_running(1.0, 0.0, 0.0);
  const ValueTerms v = evaluate_value_terms(s, 0.0, Vec{0.0}, Vec{0.0}, 0.0, Vec{0.5});
  ASSERT_TRUE(v.H.has_value());
  EXPECT_DOUBLE_EQ(*v.H, -0.25);
}

TEST(ValueTerms, ControlOutsideSetIsDomainError) {
  EXPECT_THROW(evaluate_value_terms(regulator(), 0.0, Vec{0.0}, Vec{0.0}, 1.0, Vec{1.5}), DomainError);
  EXPECT_THROW(evaluate_value_terms(regulator(), 2.0, Vec{0.0}, Vec{0.0}, 1.0, Vec{0.0}), DomainError);
}
