#include <gtest/gtest.h>

#include <cmath>

#include "tic/operators.hpp"
#include "tic/registry.hpp"
#include "tic/regulator.hpp"

using namespace tic;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.t = Axis{0.0, 1.0, 11};
  g.x = {Axis{-2.0, 2.0, 41}};
  return g;
}

const RegulatorParams kReg{};

GridFunction regulator_f(const GridSpec& g) { return regulator_closed_form(kReg).on_grid(g).f; }

std::size_t y_index(const GridSpec& g, double y) { return *g.x[0].locate(y); }

PayoffSpec aggregator(PayoffFn G, PayoffGradFn Gy) {
  PayoffSpec p;
  p.terminal = [](double, ConstSpan, ConstSpan) { return 0.0; };
  p.aggregator = std::move(G);
  p.aggregator_grad = std::move(Gy);
  return p;
}

}  // namespace

namespace {
// Apply a stencil at node i of x -> x^3 on a uniform axis from 0.
double stencil_on_cubic(const Stencil& s, std::size_t i, double h) {
  double acc = 0.0;
  for (int j = 0; j < s.size; ++j) acc += s.weight[j] * std::pow((static_cast<int>(i) + s.offset[j]) * h, 3);
  return acc;
}
}  // namespace

TEST(Stencil, OneSidedWeights) {
  const Stencil left = d1_stencil(0, 11, 0.5);
  ASSERT_EQ(left.size, 3);
  EXPECT_DOUBLE_EQ(left.weight[0], -3.0);
  EXPECT_DOUBLE_EQ(left.weight[1], 4.0);
  EXPECT_DOUBLE_EQ(left.weight[2], -1.0);
  EXPECT_EQ(d2_stencil(10, 11, 1.0).size, 4);
}

TEST(Stencil, CentralDifferencesExactOnCubicsInTheInterior) {
  const double h = 0.1;
  const double x = 5 * h;
  EXPECT_NEAR(stencil_on_cubic(d1_stencil(5, 11, h), 5, h), 3 * x * x + h * h, 1e-12);
  EXPECT_NEAR(stencil_on_cubic(d2_stencil(5, 11, h), 5, h), 6 * x, 1e-10);
  // One-sided second derivative is third order: exact on cubics.
  EXPECT_NEAR(stencil_on_cubic(d2_stencil(0, 11, h), 0, h), 0.0, 1e-10);
  EXPECT_NEAR(stencil_on_cubic(d2_stencil(10, 11, h), 10, h), 6.0, 1e-9);
}

TEST(Generator, RegulatorFIsHarmonicUnderZeroControl) {
  const GridSpec g = small_grid();
  const GridFunction f = regulator_f(g);
  const ProblemSpec spec = regulator_problem(kReg);
  for (double y : {-1.0, 0.0, 0.5}) {
    const TxView v(f, y_index(g, y));
    for (double x : {-1.5, 0.0, 1.0}) {
      EXPECT_NEAR(apply_generator(v, Vec{0.0}, spec.dynamics, 0.3, Vec{x}), 0.0, 1e-10);
    }
  }
}

TEST(Generator, RegulatorFUnderUnitControl) {
  const GridSpec g = small_grid();
  const GridFunction f = regulator_f(g);
  const ProblemSpec spec = regulator_problem(kReg);
  // -sigma^2 - u^2 (2x - 2y) + sigma^2 at (x, y) = (1, 0).
  const TxView v(f, y_index(g, 0.0));
  EXPECT_NEAR(apply_generator(v, Vec{1.0}, spec.dynamics, 0.5, Vec{1.0}), -2.0, 1e-10);
}

TEST(Generator, ConstantFunctionVanishes) {
  const GridSpec g = small_grid();
  const GridFunction h(Lattice::tx(g), 1, 3.7);
  const ProblemSpec spec = regulator_problem(kReg);
  for (double u : {-1.0, 0.3, 1.0}) {
    EXPECT_NEAR(apply_generator(TxView(h), Vec{u}, spec.dynamics, 0.0, Vec{0.4}), 0.0, 1e-12);
  }
}

TEST(Generator, ExactOnQuadraticsIncludingBoundary) {
  const GridSpec g = small_grid();
  // h = 3 t + x^2 - 0.5 x; A h = 3 + mu (2x - 0.5) + sigma^2
  const GridFunction h = tabulate(Lattice::tx(g), 1, [](ConstSpan z, MutSpan o) { o[0] = 3 * z[0] + z[1] * z[1] - 0.5 * z[1]; });
  const ProblemSpec spec = regulator_problem(kReg);
  const TxView v(h);
  for (std::size_t i = 0; i < g.x[0].count; ++i) {
    const double x = g.x[0].node(i);
    const double u = 0.7;
    const double exact = 3.0 - u * u * (2 * x - 0.5) + 0.25;
    EXPECT_NEAR(apply_generator(v, Vec{u}, spec.dynamics, 2, {i, 0}), exact, 1e-10) << "node " << i;
  }
}

TEST(Generator, Linearity) {
  const GridSpec g = small_grid();
  const Lattice lat = Lattice::tx(g);
  const GridFunction h1 = tabulate(lat, 1, [](ConstSpan z, MutSpan o) { o[0] = std::sin(z[1]) + z[0]; });
  const GridFunction h2 = tabulate(lat, 1, [](ConstSpan z, MutSpan o) { o[0] = std::exp(-z[1] * z[1]) * z[0]; });
  GridFunction mix(lat, 1);
  const double a = 2.5, b = -0.75;
  for (std::size_t i = 0; i < lat.size(); ++i) mix.at(i) = a * h1.at(i) + b * h2.at(i);
  const ProblemSpec spec = regulator_problem(kReg);
  for (std::size_t i = 0; i < g.x[0].count; i += 7) {
    const double lhs = apply_generator(TxView(mix), Vec{0.4}, spec.dynamics, 3, {i, 0});
    const double rhs = a * apply_generator(TxView(h1), Vec{0.4}, spec.dynamics, 3, {i, 0}) +
                       b * apply_generator(TxView(h2), Vec{0.4}, spec.dynamics, 3, {i, 0});
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(rhs)));
  }
}

TEST(Generator, TwoDimensionalMixedDerivative) {
  GridSpec g;
  g.t = Axis{0.0, 1.0, 5};
  g.x = {Axis{-1.0, 1.0, 9}, Axis{-1.0, 1.0, 9}};
  AffineDynamicsParams ap;
  ap.n = 2;
  ap.k = 1;
  ap.d = 2;
  ap.S = {0.5, 0.0, 0.3, 0.4};
  const DynamicsSpec dyn = affine_dynamics(ap);
  // h = x1 x2: A h = 1/2 (a12 + a21) = a12 with a = S S^T.
  const GridFunction h = tabulate(Lattice::tx(g), 1, [](ConstSpan z, MutSpan o) { o[0] = z[1] * z[2]; });
  const double a12 = 0.5 * 0.3 + 0.0 * 0.4;
  for (std::size_t i : {0u, 3u, 8u}) {
    EXPECT_NEAR(apply_generator(TxView(h), Vec{0.0}, dyn, 1, {i, 4}), a12, 1e-10);
  }
}

TEST(Generator, OffLatticeAndFinalTimeAreDomainErrors) {
  const GridSpec g = small_grid();
  const GridFunction h(Lattice::tx(g), 1, 0.0);
  const ProblemSpec spec = regulator_problem(kReg);
  EXPECT_THROW(apply_generator(TxView(h), Vec{0.0}, spec.dynamics, 0.05, Vec{0.0}), DomainError);
  EXPECT_THROW(apply_generator(TxView(h), Vec{0.0}, spec.dynamics, 0.0, Vec{0.03}), DomainError);
  EXPECT_THROW(apply_generator(TxView(h), Vec{0.0}, spec.dynamics, 1.0, Vec{0.0}), DomainError);
}

TEST(HOperator, ZeroAggregatorGivesZero) {
  const GridSpec g = small_grid();
  const ProblemSpec spec = regulator_problem(kReg);
  const GridFunction gx = regulator_closed_form(kReg).on_grid(g).g;
  for (double u : {0.0, 1.0}) EXPECT_EQ(h_operator(spec.payoffs, gx, Vec{u}, spec.dynamics, 0.2, Vec{0.5}), 0.0);
}

TEST(HOperator, SquareAggregatorOnIdentity) {
  const GridSpec g = small_grid();
  const ProblemSpec spec = regulator_problem(kReg);
  GridSpec wide = g;
  wide.x[0] = Axis{-4.0, 4.0, 41};
  const GridFunction gx = tabulate(Lattice::tx(wide), 1, [](ConstSpan z, MutSpan o) { o[0] = z[1]; });
  const PayoffSpec p = aggregator([](double, ConstSpan, ConstSpan y) { return y[0] * y[0]; },
                                  [](double, ConstSpan, ConstSpan y, MutSpan d) { d[0] = 2 * y[0]; });
  // G_y = 2x, A^1 g = -1.
  EXPECT_NEAR(h_operator(p, gx, Vec{1.0}, spec.dynamics, 0.0, Vec{3.0}), -6.0, 1e-12);
  // u = 0 makes g harmonic, so the operator vanishes.
  EXPECT_NEAR(h_operator(p, gx, Vec{0.0}, spec.dynamics, 0.0, Vec{3.0}), 0.0, 1e-12);
}

TEST(HOperator, MissingGradientIsUnsupported) {
  const GridSpec g = small_grid();
  const ProblemSpec spec = regulator_problem(kReg);
  PayoffSpec p = spec.payoffs;
  p.aggregator_grad = nullptr;
  const GridFunction gx(Lattice::tx(g), 1, 0.0);
  EXPECT_THROW(h_operator(p, gx, Vec{0.0}, spec.dynamics, 0.0, Vec{0.0}), UnsupportedOperation);
}

TEST(Diamond, Compositions) {
  const GridSpec g = small_grid();
  const GridFunction gx = tabulate(Lattice::tx(g), 1, [](ConstSpan z, MutSpan o) { o[0] = z[1]; });
  const GridFunction g2x = tabulate(Lattice::tx(g), 1, [](ConstSpan z, MutSpan o) { o[0] = 2 * z[1]; });
  const ProblemSpec spec = regulator_problem(kReg);
  EXPECT_EQ(diamond(spec.payoffs, gx, 0.0, Vec{1.0}), 0.0);
  const PayoffSpec ident = aggregator([](double, ConstSpan, ConstSpan y) { return y[0]; }, nullptr);
  EXPECT_DOUBLE_EQ(diamond(ident, gx, 0.4, Vec{-1.2}), -1.2);
  const PayoffSpec xy2 = aggregator([](double, ConstSpan x, ConstSpan y) { return x[0] * y[0] * y[0]; }, nullptr);
  EXPECT_DOUBLE_EQ(diamond(xy2, g2x, 0.0, Vec{1.0}), 4.0);
  const GridFunction grid_d = diamond_grid(xy2, g2x);
  const auto [k, idx] = locate_node(grid_d.lattice(), 0.0, Vec{1.0});
  EXPECT_DOUBLE_EQ(grid_d.at(grid_d.lattice().flat({k, idx[0]})), 4.0);
}

TEST(Diagonal, RegulatorDiagonalIsVariance) {
  const GridSpec g = small_grid();
  const GridFunction d = restrict_to_diagonal(regulator_f(g));
  for (std::size_t i = 0; i < d.lattice().size(); ++i) {
    const Vec z = d.lattice().coords(i);
    EXPECT_NEAR(d.at(i), 0.25 * (1.0 - z[0]), 1e-15);
  }
}

TEST(Diagonal, SimpleFunctions) {
  const GridSpec g = small_grid();
  const GridFunction fy = tabulate(Lattice::txy(g), 1, [](ConstSpan z, MutSpan o) { o[0] = z[1]; });
  const GridFunction fxy = tabulate(Lattice::txy(g), 1, [](ConstSpan z, MutSpan o) { o[0] = z[1] * z[2]; });
  const GridFunction dy = restrict_to_diagonal(fy);
  const GridFunction dxy = restrict_to_diagonal(fxy);
  for (std::size_t i = 0; i < dy.lattice().size(); ++i) EXPECT_DOUBLE_EQ(dy.at(i), dy.lattice().coords(i)[1]);
  const std::size_t half = *g.x[0].locate(0.5);
  EXPECT_DOUBLE_EQ(dxy.at(dxy.lattice().flat({4, half})), 0.25);
}

TEST(Diagonal, MismatchedLatticesRejected) {
  const GridSpec g = small_grid();
  const Lattice lat({g.t, Axis{-1.0, 1.0, 41}, g.x[0]}, {AxisRole::Time, AxisRole::RefState, AxisRole::State});
  const GridFunction f(lat, 1, 0.0);
  EXPECT_THROW(restrict_to_diagonal(f), DomainError);
}
