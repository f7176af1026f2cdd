#include <gtest/gtest.h>

#include <cmath>

#include "mcrnn/cells.hpp"
#include "mcrnn/gradcheck.hpp"

using namespace mcrnn;

namespace {

Vector random_vector(Rng& rng, std::size_t n) {
  Vector v(n);
  rng.fill_uniform(v.values(), 1.0);
  return v;
}

void check_cell_gradients(CellKind kind, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t H = 1 + rng.below(8), X = 1 + rng.below(8);
  CellParams p = CellParams::init(kind, H, X, rng);
  Vector s = random_vector(rng, H), x = random_vector(rng, X), c_prev = random_vector(rng, H);
  if (kind == CellKind::vanilla) c_prev = Vector{};
  const Vector wh = random_vector(rng, H), wc = random_vector(rng, H);
  CheckOptions opt;
  opt.threshold = 1e-6;
  const GradReport r = check_cell(p, s, x, c_prev, wh, wc, opt);
  EXPECT_TRUE(r.pass) << render_table(r);
}

}  // namespace

TEST(CellForward, ZeroParamsGiveZeroHidden) {
  const CellParams p = CellParams::zeros(CellKind::vanilla, 3, 2);
  const CellStep st = cell_forward(p, Vector{1, -2, 3}, Vector{4, 5});
  EXPECT_EQ(st.state.h, Vector(3));
  EXPECT_TRUE(st.state.c.empty());
}

TEST(CellForward, SaturatedForgetGateKeepsCellState) {
  CellParams p = CellParams::zeros(CellKind::lstm, 2, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    p.bias[2 + i] = 50.0;   // forget
    p.bias[i] = -50.0;      // input
  }
  const Vector c_prev{0.7, -0.3};
  const CellStep st = cell_forward(p, Vector{0.2, 0.1}, Vector{1.0}, c_prev);
  EXPECT_NEAR(st.state.c[0], 0.7, 1e-12);
  EXPECT_NEAR(st.state.c[1], -0.3, 1e-12);
}

TEST(CellForward, VanillaMatchesStraightLineReference) {
  Rng rng(0);
  const CellParams p = CellParams::init(CellKind::vanilla, 2, 2, rng);
  const Vector s = random_vector(rng, 2), x = random_vector(rng, 2);
  const auto& U = p.input_weights;
  const auto& R = p.recurrent_weights;
  const double h0 = std::tanh(U(0, 0) * x[0] + U(0, 1) * x[1] + R(0, 0) * s[0] + R(0, 1) * s[1] + p.bias[0]);
  const double h1 = std::tanh(U(1, 0) * x[0] + U(1, 1) * x[1] + R(1, 0) * s[0] + R(1, 1) * s[1] + p.bias[1]);
  const CellStep st = cell_forward(p, s, x);
  EXPECT_NEAR(st.state.h[0], h0, 1e-15);
  EXPECT_NEAR(st.state.h[1], h1, 1e-15);
}

TEST(CellForward, LstmMatchesStraightLineReference) {
  Rng rng(3);
  const CellParams p = CellParams::init(CellKind::lstm, 1, 1, rng);
  const double s = 0.4, x = -0.8, c0 = 0.25;
  auto pre = [&](std::size_t g) {
    return p.input_weights(g, 0) * x + p.recurrent_weights(g, 0) * s + p.bias[g];
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double i = sig(pre(0)), f = sig(pre(1)), g = std::tanh(pre(2)), o = sig(pre(3));
  const double c = f * c0 + i * g;
  const CellStep st = cell_forward(p, Vector{s}, Vector{x}, Vector{c0});
  EXPECT_NEAR(st.state.c[0], c, 1e-15);
  EXPECT_NEAR(st.state.h[0], o * std::tanh(c), 1e-15);
}

TEST(CellForward, ShapeErrors) {
  const CellParams p = CellParams::zeros(CellKind::lstm, 3, 2);
  EXPECT_THROW(cell_forward(p, Vector(2), Vector(2)), ShapeError);
  EXPECT_THROW(cell_forward(p, Vector(3), Vector(3)), ShapeError);
  EXPECT_THROW(cell_forward(p, Vector(3), Vector(2), Vector(4)), ShapeError);
}

TEST(CellForward, InitUsesForgetBiasOne) {
  Rng rng(1);
  const CellParams p = CellParams::init(CellKind::lstm, 4, 3, rng);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p.bias[4 + i], 1.0);
  for (double w : p.recurrent_weights.values()) EXPECT_LE(std::abs(w), 0.5);
}

TEST(CellBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(2);
  for (CellKind kind : {CellKind::vanilla, CellKind::lstm}) {
    const CellParams p = CellParams::init(kind, 3, 2, rng);
    CellParams grads = CellParams::zeros(kind, 3, 2);
    const CellStep st = cell_forward(p, random_vector(rng, 3), random_vector(rng, 2),
                                     kind == CellKind::lstm ? random_vector(rng, 3) : Vector{});
    const CellGradients g = cell_backward(p, st.cache, Vector(3), kind == CellKind::lstm ? Vector(3) : Vector{}, grads);
    for (double v : grads.input_weights.values()) EXPECT_EQ(v, 0.0);
    for (double v : grads.recurrent_weights.values()) EXPECT_EQ(v, 0.0);
    for (double v : grads.bias.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_s.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_x.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_c_prev.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(CellBackward, UnusedTemporalInputHasZeroGradient) {
  Rng rng(4);
  CellParams p = CellParams::init(CellKind::vanilla, 3, 3, rng);
  p.recurrent_weights.fill(0.0);
  CellParams grads = CellParams::zeros(CellKind::vanilla, 3, 3);
  const CellStep st = cell_forward(p, random_vector(rng, 3), random_vector(rng, 3));
  const CellGradients g = cell_backward(p, st.cache, random_vector(rng, 3), {}, grads);
  for (double v : g.grad_s.values()) EXPECT_EQ(v, 0.0);
}

TEST(CellBackward, MismatchedCacheIsRejected) {
  Rng rng(5);
  const CellParams lstm = CellParams::init(CellKind::lstm, 3, 2, rng);
  const CellParams vanilla = CellParams::init(CellKind::vanilla, 3, 2, rng);
  const CellStep st = cell_forward(vanilla, Vector(3), Vector(2));
  CellParams grads = CellParams::zeros(CellKind::lstm, 3, 2);
  EXPECT_THROW(cell_backward(lstm, st.cache, Vector(3), Vector(3), grads), ConsistencyError);
}

TEST(CellBackward, ForwardIsPure) {
  Rng rng(6);
  const CellParams p = CellParams::init(CellKind::lstm, 4, 3, rng);
  const Vector s = random_vector(rng, 4), x = random_vector(rng, 3), c = random_vector(rng, 4);
  const CellStep a = cell_forward(p, s, x, c);
  CellParams grads = CellParams::zeros(CellKind::lstm, 4, 3);
  cell_backward(p, a.cache, random_vector(rng, 4), random_vector(rng, 4), grads);
  const CellStep b = cell_forward(p, s, x, c);
  EXPECT_EQ(a.state.h, b.state.h);
  EXPECT_EQ(a.state.c, b.state.c);
}

TEST(CellGradcheck, VanillaRandomInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) check_cell_gradients(CellKind::vanilla, seed);
}

TEST(CellGradcheck, LstmRandomInstances) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) check_cell_gradients(CellKind::lstm, seed);
}
