#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mcrnn/gradcheck.hpp"
#include "mcrnn/layer.hpp"

using namespace mcrnn;

namespace {

Vector random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  Vector v(n);
  rng.fill_uniform(v.values(), scale);
  return v;
}

std::vector<Vector> random_inputs(Rng& rng, std::size_t T, std::size_t dim) {
  std::vector<Vector> xs;
  for (std::size_t t = 0; t < T; ++t) xs.push_back(random_vector(rng, dim));
  return xs;
}

// Layer with W_j perturbed well away from identity so the mixing matters.
LayerParams random_layer(int n, CellKind kind, std::size_t H, std::size_t X, Rng& rng) {
  LayerParams lp = LayerParams::init(Topology(n), kind, H, X, rng, 0.3);
  return lp;
}

// Independent straight-line reference of a vanilla multi-channel layer using
// raw arrays: returns alpha[t][k].
std::vector<std::vector<double>> reference_alphas(const LayerParams& lp, const std::vector<Vector>& xs) {
  const int n = lp.topo.block_size();
  const int K = n - 1;
  const std::size_t H = lp.hidden_dim(), X = lp.input_dim();
  const long T = static_cast<long>(xs.size());
  // h[k][t], t = 0 is the padded zero state
  std::vector<std::vector<std::vector<double>>> h(K, std::vector<std::vector<double>>(T + 1, std::vector<double>(H, 0.0)));
  std::vector<std::vector<double>> alphas;
  for (long t = 1; t <= T; ++t) {
    std::vector<double> e(K);
    for (int k = 1; k <= K; ++k) {
      long m = (t - k - 1) % (n - 1);
      if (m < 0) m += n - 1;
      m += 1;
      std::vector<double> s(H, 0.0);
      for (long j = 1; j <= m; ++j) {
        if (t - j <= 0) continue;
        for (std::size_t r = 0; r < H; ++r)
          for (std::size_t c = 0; c < H; ++c) s[r] += lp.mix[j - 1](r, c) * h[k - 1][t - j][c];
      }
      for (auto& v : s) v /= static_cast<double>(m);
      const Vector& x = xs[t - 1];
      for (std::size_t r = 0; r < H; ++r) {
        double z = lp.cell.bias[r];
        for (std::size_t c = 0; c < X; ++c) z += lp.cell.input_weights(r, c) * x[c];
        for (std::size_t c = 0; c < H; ++c) z += lp.cell.recurrent_weights(r, c) * s[c];
        h[k - 1][t][r] = std::tanh(z);
      }
      double logit = 0.0;
      for (std::size_t r = 0; r < H; ++r) {
        double z = 0.0;
        for (std::size_t c = 0; c < H; ++c) z += lp.attn_V(r, c) * h[k - 1][t][c];
        for (std::size_t c = 0; c < X; ++c) z += lp.attn_V(r, H + c) * x[c];
        logit += lp.attn_r[r] * std::tanh(z);
      }
      e[k - 1] = logit;
    }
    double mx = e[0];
    for (double v : e) mx = std::max(mx, v);
    double total = 0.0;
    for (double& v : e) total += (v = std::exp(v - mx));
    for (double& v : e) v /= total;
    alphas.push_back(e);
  }
  return alphas;
}

void expect_simplex(const StepTape& tape) {
  for (const auto& a : tape.alpha) {
    double total = 0.0;
    for (double v : a.values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(a.dim() == 1 ? 0.5 : v, 1.0);
      total += v;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

void layer_gradcheck(int n, CellKind kind, std::uint64_t seed, bool mix_cell, bool carried) {
  Rng rng(seed);
  const std::size_t H = 5, X = 5, T = 7;
  LayerParams lp = random_layer(n, kind, H, X, rng);
  lp.mix_cell_state = mix_cell;
  std::vector<Vector> xs = random_inputs(rng, T, X);
  const std::vector<Vector> probe = random_inputs(rng, T, H);
  LayerState init;
  if (carried) init = layer_forward(lp, random_inputs(rng, 5, X)).final_state;
  const LayerState* init_ptr = carried ? &init : nullptr;

  expect_simplex(layer_forward(lp, xs, init_ptr).tape);
  CheckOptions opt;
  opt.threshold = 1e-6;
  const GradReport r = check_layer(lp, xs, probe, init_ptr, opt);
  EXPECT_TRUE(r.pass) << "n=" << n << " kind=" << to_string(kind) << " seed=" << seed << "\n" << render_table(r);
}

}  // namespace

TEST(TemporalInput, ZeroPaddedAtFirstStep) {
  Rng rng(1);
  const LayerParams lp = random_layer(4, CellKind::vanilla, 3, 2, rng);
  StepTape tape;
  tape.topo = lp.topo;
  tape.channels.resize(3);
  for (int k = 1; k <= 3; ++k) EXPECT_EQ(temporal_input(lp, tape, k, 1), Vector(3));
}

TEST(TemporalInput, SingleTermAndHandArithmetic) {
  LayerParams lp = LayerParams::zeros(Topology(4), CellKind::vanilla, 2, 1);
  for (auto& w : lp.mix) w = Matrix::identity(2);
  lp.W(1) = Matrix{{2, 0}, {1, 1}};
  StepTape tape;
  tape.topo = lp.topo;
  tape.first_step = 1;
  tape.channels.resize(3);
  tape.channels[0].h = {Vector{3, 3}, Vector{0, 3}, Vector{3, 0}};
  // channel 2 at t=3 has m=1: s = W_1 h_2
  tape.channels[1].h = tape.channels[0].h;
  EXPECT_EQ(temporal_input(lp, tape, 2, 3), (Vector{0, 3}));
  // channel 1 at t=4 has m=3; with W_1 = W_2 = W_3 = I: ([3,0]+[0,3]+[3,3]) / 3
  lp.W(1) = Matrix::identity(2);
  EXPECT_EQ(temporal_input(lp, tape, 1, 4), (Vector{2, 2}));
}

TEST(AttentionLogit, ZeroProjectionOrZeroV) {
  Rng rng(2);
  LayerParams lp = random_layer(3, CellKind::vanilla, 4, 3, rng);
  const Vector h = random_vector(rng, 4), x = random_vector(rng, 3);
  LayerParams a = lp;
  a.attn_r.fill(0.0);
  EXPECT_EQ(attention_logit(a, h, x), 0.0);
  LayerParams b = lp;
  b.attn_V.fill(0.0);
  EXPECT_EQ(attention_logit(b, h, x), 0.0);
  EXPECT_THROW(attention_logit(lp, Vector(3), x), ShapeError);
}

TEST(AttentionLogit, MatchesStraightLineReference) {
  Rng rng(0);
  const LayerParams lp = random_layer(3, CellKind::vanilla, 2, 2, rng);
  const Vector h = random_vector(rng, 2), x = random_vector(rng, 2);
  double e = 0.0;
  for (std::size_t r = 0; r < 2; ++r) {
    const double z = lp.attn_V(r, 0) * h[0] + lp.attn_V(r, 1) * h[1] + lp.attn_V(r, 2) * x[0] + lp.attn_V(r, 3) * x[1];
    e += lp.attn_r[r] * std::tanh(z);
  }
  EXPECT_NEAR(attention_logit(lp, h, x), e, 1e-15);
}

TEST(Aggregate, IdenticalStatesAndDegenerateCases) {
  Rng rng(3);
  const LayerParams lp = random_layer(4, CellKind::vanilla, 3, 2, rng);
  const Vector v = random_vector(rng, 3), x = random_vector(rng, 2);
  const Aggregate a = aggregate(lp, {v, v, v}, x);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(a.output[i], v[i], 1e-15);
    EXPECT_NEAR(a.alpha[i], 1.0 / 3.0, 1e-15);
  }
  const Aggregate one = aggregate(lp, {v}, x);
  EXPECT_EQ(one.alpha, Vector{1.0});
  EXPECT_EQ(one.output, v);
}

TEST(Aggregate, ShiftInvariantUnderCommonLogitOffset) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector logits = random_vector(rng, 4, 5.0);
    Vector shifted(logits);
    const double c = rng.uniform(-100, 100);
    for (double& v : shifted.values()) v += c;
    const Vector a = softmax(logits), b = softmax(shifted);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
  }
}

TEST(LayerForward, SingleStepStartsFromZeroState) {
  Rng rng(5);
  const LayerParams lp = random_layer(4, CellKind::lstm, 4, 3, rng);
  const Vector x = random_vector(rng, 3);
  const LayerForward f = layer_forward(lp, {x});
  const CellStep ref = cell_forward(lp.cell, Vector(4), x, Vector(4));
  for (const auto& ch : f.tape.channels) EXPECT_EQ(ch.h[0], ref.state.h);
  for (double a : f.tape.alpha[0].values()) EXPECT_NEAR(a, 1.0 / 3.0, 1e-15);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(f.outputs[0][i], ref.state.h[i], 1e-15);
}

TEST(LayerForward, AlphasMatchStraightLineReference) {
  Rng rng(0);
  const LayerParams lp = random_layer(3, CellKind::vanilla, 3, 2, rng);
  const std::vector<Vector> xs = random_inputs(rng, 6, 2);
  const LayerForward f = layer_forward(lp, xs);
  const auto ref = reference_alphas(lp, xs);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(f.tape.alpha[t][k], ref[t][k], 1e-13);
  expect_simplex(f.tape);
}

TEST(LayerForward, DegenerateBlockReducesToConventionalRnn) {
  for (CellKind kind : {CellKind::vanilla, CellKind::lstm}) {
    Rng rng(6);
    LayerParams lp = LayerParams::init(Topology(2), kind, 4, 3, rng, 0.0);
    const std::vector<Vector> xs = random_inputs(rng, 9, 3);
    const LayerForward f = layer_forward(lp, xs);
    Vector h(4), c(kind == CellKind::lstm ? 4 : 0);
    for (std::size_t t = 0; t < xs.size(); ++t) {
      const CellStep st = cell_forward(lp.cell, h, xs[t], c);
      h = st.state.h;
      c = st.state.c;
      for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(f.outputs[t][i], h[i], 1e-12);
    }
  }
}

TEST(LayerForward, CarriedStateMatchesSingleWindow) {
  for (CellKind kind : {CellKind::vanilla, CellKind::lstm})
    for (bool mix_cell : {false, true}) {
      Rng rng(7);
      LayerParams lp = random_layer(4, kind, 3, 2, rng);
      lp.mix_cell_state = mix_cell;
      const std::vector<Vector> xs = random_inputs(rng, 11, 2);
      const LayerForward whole = layer_forward(lp, xs);
      const std::vector<Vector> a(xs.begin(), xs.begin() + 4), b(xs.begin() + 4, xs.end());
      const LayerForward first = layer_forward(lp, a);
      const LayerForward second = layer_forward(lp, b, &first.final_state);
      EXPECT_EQ(second.tape.first_step, 5);
      for (std::size_t t = 0; t < b.size(); ++t) EXPECT_EQ(second.outputs[t], whole.outputs[t + 4]);
    }
}

TEST(LayerForward, ChannelWorkerCountDoesNotChangeBits) {
  Rng rng(8);
  const LayerParams lp = random_layer(5, CellKind::lstm, 4, 3, rng);
  const std::vector<Vector> xs = random_inputs(rng, 12, 3);
  const std::vector<Vector> probe = random_inputs(rng, 12, 4);
  const LayerForward serial = layer_forward(lp, xs, nullptr, 1);
  const LayerBackward gs = layer_backward(lp, serial.tape, probe, 1);
  for (int workers : {2, 3, 4, 8}) {
    const LayerForward par = layer_forward(lp, xs, nullptr, workers);
    EXPECT_EQ(par.outputs, serial.outputs);
    const LayerBackward gp = layer_backward(lp, par.tape, probe, workers);
    EXPECT_EQ(gp.grads.cell.input_weights, gs.grads.cell.input_weights);
    EXPECT_EQ(gp.grads.mix, gs.grads.mix);
    EXPECT_EQ(gp.grads.attn_V, gs.grads.attn_V);
    EXPECT_EQ(gp.grad_inputs, gs.grad_inputs);
  }
}

TEST(LayerForward, RejectsBadInputs) {
  Rng rng(9);
  const LayerParams lp = random_layer(3, CellKind::vanilla, 3, 2, rng);
  EXPECT_THROW(layer_forward(lp, {}), ArgumentError);
  EXPECT_THROW(layer_forward(lp, {Vector(3)}), ShapeError);
}

TEST(LayerBackward, ZeroUpstreamGivesZeroGradients) {
  Rng rng(10);
  const LayerParams lp = random_layer(4, CellKind::lstm, 3, 2, rng);
  const std::vector<Vector> xs = random_inputs(rng, 6, 2);
  const LayerForward f = layer_forward(lp, xs);
  const LayerBackward b = layer_backward(lp, f.tape, std::vector<Vector>(6, Vector(3)));
  for (double v : b.grads.cell.recurrent_weights.values()) EXPECT_EQ(v, 0.0);
  for (const auto& w : b.grads.mix)
    for (double v : w.values()) EXPECT_EQ(v, 0.0);
  for (double v : b.grads.attn_V.values()) EXPECT_EQ(v, 0.0);
  for (const auto& g : b.grad_inputs)
    for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerBackward, TapeMismatchIsRejected) {
  Rng rng(11);
  const LayerParams a = random_layer(4, CellKind::vanilla, 3, 2, rng);
  const LayerParams b = random_layer(3, CellKind::vanilla, 3, 2, rng);
  const LayerForward f = layer_forward(a, random_inputs(rng, 4, 2));
  EXPECT_THROW(layer_backward(b, f.tape, std::vector<Vector>(4, Vector(3))), ConsistencyError);
  EXPECT_THROW(layer_backward(a, f.tape, std::vector<Vector>(3, Vector(3))), ShapeError);
}

TEST(LayerBackward, DegenerateBlockMatchesConventionalBptt) {
  for (CellKind kind : {CellKind::vanilla, CellKind::lstm}) {
    Rng rng(12);
    const std::size_t H = 4, X = 3, T = 8;
    LayerParams lp = LayerParams::init(Topology(2), kind, H, X, rng, 0.0);
    lp.freeze_mix = true;
    const std::vector<Vector> xs = random_inputs(rng, T, X);
    const std::vector<Vector> probe = random_inputs(rng, T, H);
    const LayerForward f = layer_forward(lp, xs);
    const LayerBackward lb = layer_backward(lp, f.tape, probe);

    // conventional BPTT: h_t = f(h_{t-1}, x_t), c carried
    std::vector<CellCache> caches;
    Vector h(H), c(kind == CellKind::lstm ? H : 0);
    for (std::size_t t = 0; t < T; ++t) {
      CellStep st = cell_forward(lp.cell, h, xs[t], c);
      h = st.state.h;
      c = st.state.c;
      caches.push_back(std::move(st.cache));
    }
    CellParams grads = CellParams::zeros(kind, H, X);
    Vector gh(H), gc(kind == CellKind::lstm ? H : 0);
    std::vector<Vector> gx(T);
    for (std::size_t t = T; t-- > 0;) {
      axpy_inplace(1.0, probe[t], gh);
      const CellGradients g = cell_backward(lp.cell, caches[t], gh, gc, grads);
      gh = g.grad_s;
      gc = g.grad_c_prev;
      gx[t] = g.grad_x;
    }
    auto close = [](std::span<const double> a, std::span<const double> b) {
      ASSERT_EQ(a.size(), b.size());
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
    };
    close(lb.grads.cell.input_weights.values(), grads.input_weights.values());
    close(lb.grads.cell.recurrent_weights.values(), grads.recurrent_weights.values());
    close(lb.grads.cell.bias.values(), grads.bias.values());
    for (std::size_t t = 0; t < T; ++t) close(lb.grad_inputs[t].values(), gx[t].values());
    for (double v : lb.grads.mix[0].values()) EXPECT_EQ(v, 0.0);
    for (double v : lb.grads.attn_V.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(LayerBackward, GradientsOnlyReachNodesWithinOneBlock) {
  Rng rng(13);
  for (int n = 2; n <= 5; ++n) {
    const LayerParams lp = random_layer(n, CellKind::vanilla, 2, 2, rng);
    const LayerForward f = layer_forward(lp, random_inputs(rng, 20, 2));
    for (int k = 1; k <= lp.channels(); ++k)
      for (long step = 1; step <= 20; ++step) {
        std::vector<Vector> touched(20, Vector(2));
        std::vector<Matrix> gmix(lp.mix.size(), Matrix(2, 2));
        detail::mix_backward(lp, f.tape, k, step, Vector{1.0, 1.0}, false, gmix, touched);
        std::set<long> sources;
        for (long s = 1; s <= 20; ++s)
          if (touched[static_cast<std::size_t>(s - 1)] != Vector(2)) sources.insert(s);
        for (long s : sources) {
          EXPECT_LT(s, step);
          EXPECT_LE(step - s, n - 1);
          EXPECT_LE(step - s, in_degree(lp.topo, k, step));
        }
      }
  }
}

TEST(LayerGradcheck, VanillaAllBlockSizes) {
  for (int n = 2; n <= 4; ++n)
    for (std::uint64_t seed = 0; seed < 3; ++seed) layer_gradcheck(n, CellKind::vanilla, seed, false, false);
}

TEST(LayerGradcheck, LstmAllBlockSizes) {
  for (int n = 2; n <= 4; ++n)
    for (std::uint64_t seed = 0; seed < 3; ++seed) layer_gradcheck(n, CellKind::lstm, seed, false, false);
}

TEST(LayerGradcheck, MixedCellStateAndCarriedHistory) {
  layer_gradcheck(4, CellKind::lstm, 21, true, false);
  layer_gradcheck(3, CellKind::lstm, 22, true, true);
  layer_gradcheck(4, CellKind::vanilla, 23, false, true);
}
