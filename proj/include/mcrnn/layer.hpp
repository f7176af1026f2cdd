#pragma once

// One multi-channel recurrent layer.
//
// K = n - 1 channels run the same cell over the same inputs. In channel k the
// cell at step t consumes the temporal input
//
//     s_{t-1}^k = (1 / m_t^k) * sum_{j=1..m_t^k} W_j h_{t-j}^k
//
// instead of h_{t-1}; W_j depends only on the distance j and is shared by all
// channels. Per step, an attention module scores every channel,
//
//     e_t^k = r . tanh(V [h_t^k ; x_t]),   alpha_t = softmax(e_t),
//
// and the layer output is sum_k alpha_t^k h_t^k. The output goes upward only;
// channels never read it back.
//
// Channels are independent until the attention step, so forward and backward
// process whole channels in parallel and reduce per-channel gradient buffers
// in channel order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mcrnn/cells.hpp"
#include "mcrnn/errors.hpp"
#include "mcrnn/numerics.hpp"
#include "mcrnn/parallel.hpp"
#include "mcrnn/topology.hpp"

namespace mcrnn {

template <typename T>
struct BasicLayerParams {
  Topology topo;
  BasicCellParams<T> cell;
  std::vector<BasicMatrix<T>> mix;  // mix[j-1] = W_j, j = 1..n-1
  BasicVector<T> attn_r;            // N_h
  BasicMatrix<T> attn_V;            // N_h x (N_h + N_x)
  bool mix_cell_state = false;
  bool freeze_mix = false;  // W_j held fixed (conventional-RNN baseline)

  std::size_t hidden_dim() const noexcept { return cell.hidden_dim; }
  std::size_t input_dim() const noexcept { return cell.input_dim; }
  int channels() const noexcept { return topo.channels(); }

  const BasicMatrix<T>& W(int distance) const { return mix.at(static_cast<std::size_t>(distance - 1)); }
  BasicMatrix<T>& W(int distance) { return mix.at(static_cast<std::size_t>(distance - 1)); }

  static BasicLayerParams zeros(const Topology& topo, CellKind kind, std::size_t hidden, std::size_t input) {
    BasicLayerParams lp;
    lp.topo = topo;
    lp.cell = BasicCellParams<T>::zeros(kind, hidden, input);
    lp.mix.assign(static_cast<std::size_t>(topo.channels()), BasicMatrix<T>(hidden, hidden));
    lp.attn_r = BasicVector<T>(hidden);
    lp.attn_V = BasicMatrix<T>(hidden, hidden + input);
    return lp;
  }

  // Cell and attention weights uniform(-1/sqrt(N_h), 1/sqrt(N_h)); W_j is the
  // identity plus uniform(-mix_noise, mix_noise).
  static BasicLayerParams init(const Topology& topo, CellKind kind, std::size_t hidden, std::size_t input,
                               Rng& rng, double mix_noise = 0.01) {
    BasicLayerParams lp = zeros(topo, kind, hidden, input);
    lp.cell = BasicCellParams<T>::init(kind, hidden, input, rng);
    for (auto& w : lp.mix) {
      w = BasicMatrix<T>::identity(hidden);
      if (mix_noise > 0.0)
        for (T& v : w.values()) v += static_cast<T>(rng.uniform(-mix_noise, mix_noise));
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    rng.fill_uniform(lp.attn_r.values(), bound);
    rng.fill_uniform(lp.attn_V.values(), bound);
    return lp;
  }

  // Same shapes and flags, all tensors zero (gradient buffer).
  BasicLayerParams zeros_like() const {
    BasicLayerParams g = zeros(topo, cell.kind, hidden_dim(), input_dim());
    g.mix_cell_state = mix_cell_state;
    g.freeze_mix = freeze_mix;
    return g;
  }

  template <typename U>
  BasicLayerParams<U> cast() const {
    BasicLayerParams<U> lp;
    lp.topo = topo;
    lp.cell = cell.template cast<U>();
    lp.mix = cast_all<U>(mix);
    lp.attn_r = attn_r.template cast<U>();
    lp.attn_V = attn_V.template cast<U>();
    lp.mix_cell_state = mix_cell_state;
    lp.freeze_mix = freeze_mix;
    return lp;
  }
};

// Hidden/cell history carried between consecutive windows of one stream.
// h[k][i] holds the state at step steps_done - size + 1 + i (oldest first).
template <typename T>
struct BasicLayerState {
  long steps_done = 0;
  std::vector<std::vector<BasicVector<T>>> h;
  std::vector<std::vector<BasicVector<T>>> c;

  template <typename U>
  BasicLayerState<U> cast() const {
    BasicLayerState<U> st;
    st.steps_done = steps_done;
    for (const auto& v : h) st.h.push_back(cast_all<U>(v));
    for (const auto& v : c) st.c.push_back(cast_all<U>(v));
    return st;
  }
};

template <typename T>
struct BasicChannelTape {
  std::vector<BasicVector<T>> s;     // temporal input fed to the cell
  std::vector<BasicVector<T>> c_in;  // cell state fed to the cell (lstm only)
  std::vector<BasicCellCache<T>> cache;
  std::vector<BasicVector<T>> h;
  std::vector<BasicVector<T>> c;
};

template <typename T>
struct BasicStepTape {
  Topology topo;
  std::size_t hidden_dim = 0;
  std::size_t input_dim = 0;
  CellKind kind = CellKind::vanilla;
  long first_step = 1;  // absolute step index of inputs[0]
  BasicLayerState<T> initial;
  std::vector<BasicVector<T>> inputs;
  std::vector<BasicChannelTape<T>> channels;         // [k-1]
  std::vector<BasicVector<T>> logits;                // [t] -> K
  std::vector<BasicVector<T>> alpha;                 // [t] -> K
  std::vector<std::vector<BasicVector<T>>> attn_act; // [t][k-1] = tanh(V [h; x])
  std::vector<BasicVector<T>> outputs;

  long length() const noexcept { return static_cast<long>(inputs.size()); }
  long last_step() const noexcept { return first_step + length() - 1; }
};

using LayerParams = BasicLayerParams<double>;
using LayerState = BasicLayerState<double>;
using ChannelTape = BasicChannelTape<double>;
using StepTape = BasicStepTape<double>;

namespace detail {

template <typename T>
const BasicVector<T>* history_at(const std::vector<BasicVector<T>>& hist, long steps_done, long step) {
  const long oldest = steps_done - static_cast<long>(hist.size()) + 1;
  if (step < oldest || step > steps_done) return nullptr;
  return &hist[static_cast<std::size_t>(step - oldest)];
}

// State of channel k at absolute `step`, or nullptr for a padded zero state.
template <typename T>
const BasicVector<T>* state_at(const BasicStepTape<T>& tape, int k, long step, bool cell_state) {
  if (step <= 0) return nullptr;
  const auto& ch = tape.channels[static_cast<std::size_t>(k - 1)];
  if (step >= tape.first_step) {
    const auto& seq = cell_state ? ch.c : ch.h;
    const auto idx = static_cast<std::size_t>(step - tape.first_step);
    return idx < seq.size() ? &seq[idx] : nullptr;
  }
  const auto& hist = cell_state ? tape.initial.c : tape.initial.h;
  if (static_cast<std::size_t>(k - 1) >= hist.size()) return nullptr;
  return history_at(hist[static_cast<std::size_t>(k - 1)], tape.initial.steps_done, step);
}

template <typename T>
BasicVector<T> mixed_state(const BasicLayerParams<T>& lp, const BasicStepTape<T>& tape, int k, long t,
                           bool cell_state) {
  const int m = in_degree(lp.topo, k, t);
  BasicVector<T> s(lp.hidden_dim());
  for (int j = 1; j <= m; ++j)
    if (const auto* prev = state_at(tape, k, t - j, cell_state)) matvec_acc(lp.W(j), *prev, T(1), s);
  const T inv_m = T(1) / T(m);
  for (std::size_t i = 0; i < s.dim(); ++i) s[i] *= inv_m;
  return s;
}

}  // namespace detail

// s_{t-1}^k for absolute step t, reading channel k's states from the tape
// (steps inside the window), its carried history, or zero padding.
template <typename T>
BasicVector<T> temporal_input(const BasicLayerParams<T>& lp, const BasicStepTape<T>& tape, int k, long t) {
  if (k < 1 || k > lp.channels()) throw ArgumentError("temporal_input: channel out of range");
  return detail::mixed_state(lp, tape, k, t, false);
}

template <typename T>
T attention_logit(const BasicLayerParams<T>& lp, const BasicVector<T>& h, const BasicVector<T>& x,
                  BasicVector<T>* act_out = nullptr) {
  if (h.dim() != lp.hidden_dim()) throw ShapeError("attention_logit: hidden dim mismatch");
  if (x.dim() != lp.input_dim()) throw ShapeError("attention_logit: input dim mismatch");
  BasicVector<T> act = tanh_vec(matvec(lp.attn_V, concat(h, x)));
  const T e = dot(lp.attn_r, act);
  if (act_out) *act_out = std::move(act);
  return e;
}

template <typename T>
struct BasicAggregate {
  BasicVector<T> output;  // h_att
  BasicVector<T> alpha;   // K
  BasicVector<T> logits;  // K
};
using Aggregate = BasicAggregate<double>;

template <typename T>
BasicAggregate<T> aggregate(const BasicLayerParams<T>& lp, const std::vector<BasicVector<T>>& hs,
                            const BasicVector<T>& x, std::vector<BasicVector<T>>* acts = nullptr) {
  if (hs.empty()) throw ShapeError("aggregate: no channel states");
  BasicAggregate<T> a;
  a.logits = BasicVector<T>(hs.size());
  if (acts) acts->resize(hs.size());
  for (std::size_t k = 0; k < hs.size(); ++k)
    a.logits[k] = attention_logit(lp, hs[k], x, acts ? &(*acts)[k] : nullptr);
  a.alpha = softmax(a.logits);
  a.output = BasicVector<T>(lp.hidden_dim());
  for (std::size_t k = 0; k < hs.size(); ++k) axpy_inplace(a.alpha[k], hs[k], a.output);
  return a;
}

template <typename T>
struct BasicLayerForward {
  std::vector<BasicVector<T>> outputs;
  BasicStepTape<T> tape;
  BasicLayerState<T> final_state;
};
using LayerForward = BasicLayerForward<double>;

template <typename T>
BasicLayerForward<T> layer_forward(const BasicLayerParams<T>& lp, const std::vector<BasicVector<T>>& xs,
                                   const std::type_identity_t<BasicLayerState<T>>* init = nullptr, int workers = 1) {
  using Vec = BasicVector<T>;
  if (xs.empty()) throw ArgumentError("layer_forward: empty input sequence");
  for (const auto& x : xs)
    if (x.dim() != lp.input_dim())
      throw ShapeError("layer_forward: input dim " + std::to_string(x.dim()) + " vs " +
                       std::to_string(lp.input_dim()));
  const int K = lp.channels();
  const long T_len = static_cast<long>(xs.size());
  const bool lstm = lp.cell.is_lstm();

  BasicLayerForward<T> out;
  BasicStepTape<T>& tape = out.tape;
  tape.topo = lp.topo;
  tape.hidden_dim = lp.hidden_dim();
  tape.input_dim = lp.input_dim();
  tape.kind = lp.cell.kind;
  if (init) tape.initial = *init;
  tape.first_step = tape.initial.steps_done + 1;
  tape.inputs = xs;
  tape.channels.resize(static_cast<std::size_t>(K));

  parallel_for(static_cast<std::size_t>(K), workers, [&](std::size_t ci) {
    const int k = static_cast<int>(ci) + 1;
    BasicChannelTape<T>& ch = tape.channels[ci];
    ch.s.reserve(xs.size());
    ch.cache.reserve(xs.size());
    ch.h.reserve(xs.size());
    if (lstm) {
      ch.c.reserve(xs.size());
      ch.c_in.reserve(xs.size());
    }
    for (long t = 0; t < T_len; ++t) {
      const long step = tape.first_step + t;
      Vec s = detail::mixed_state(lp, tape, k, step, false);
      Vec c_in;
      if (lstm) {
        if (lp.mix_cell_state) {
          c_in = detail::mixed_state(lp, tape, k, step, true);
        } else {
          const Vec* prev = detail::state_at(tape, k, step - 1, true);
          c_in = prev ? *prev : Vec(lp.hidden_dim());
        }
      }
      BasicCellStep<T> cs = cell_forward(lp.cell, s, xs[static_cast<std::size_t>(t)], c_in);
      ch.s.push_back(std::move(s));
      ch.cache.push_back(std::move(cs.cache));
      ch.h.push_back(std::move(cs.state.h));
      if (lstm) {
        ch.c_in.push_back(std::move(c_in));
        ch.c.push_back(std::move(cs.state.c));
      }
    }
  });

  tape.logits.resize(xs.size());
  tape.alpha.resize(xs.size());
  tape.attn_act.resize(xs.size());
  tape.outputs.resize(xs.size());
  std::vector<Vec> hs(static_cast<std::size_t>(K));
  for (std::size_t t = 0; t < xs.size(); ++t) {
    for (int k = 0; k < K; ++k) hs[static_cast<std::size_t>(k)] = tape.channels[static_cast<std::size_t>(k)].h[t];
    BasicAggregate<T> a = aggregate(lp, hs, xs[t], &tape.attn_act[t]);
    tape.logits[t] = std::move(a.logits);
    tape.alpha[t] = std::move(a.alpha);
    tape.outputs[t] = std::move(a.output);
  }
  out.outputs = tape.outputs;

  // Keep the last n-1 states of every channel for the next window.
  BasicLayerState<T>& fin = out.final_state;
  fin.steps_done = tape.last_step();
  const long keep = std::min<long>(K, fin.steps_done);
  fin.h.resize(static_cast<std::size_t>(K));
  if (lstm) fin.c.resize(static_cast<std::size_t>(K));
  for (int k = 1; k <= K; ++k) {
    for (long step = fin.steps_done - keep + 1; step <= fin.steps_done; ++step) {
      const Vec* h = detail::state_at(tape, k, step, false);
      fin.h[static_cast<std::size_t>(k - 1)].push_back(h ? *h : Vec(lp.hidden_dim()));
      if (lstm) {
        const Vec* c = detail::state_at(tape, k, step, true);
        fin.c[static_cast<std::size_t>(k - 1)].push_back(c ? *c : Vec(lp.hidden_dim()));
      }
    }
  }
  return out;
}

template <typename T>
struct BasicLayerBackward {
  BasicLayerParams<T> grads;
  std::vector<BasicVector<T>> grad_inputs;
};
using LayerBackward = BasicLayerBackward<double>;

namespace detail {

// Distributes dL/d(mixed state) over its summands: W_j gets (1/m) g ⊗ state,
// in-window predecessors get (1/m) W_jᵀ g.
template <typename T>
void mix_backward(const BasicLayerParams<T>& lp, const BasicStepTape<T>& tape, int k, long step,
                  const BasicVector<T>& grad, bool cell_state, std::vector<BasicMatrix<T>>& grad_mix,
                  std::vector<BasicVector<T>>& grad_states) {
  const int m = in_degree(lp.topo, k, step);
  const T inv_m = T(1) / T(m);
  for (int j = 1; j <= m; ++j) {
    const long src = step - j;
    const BasicVector<T>* prev = state_at(tape, k, src, cell_state);
    if (!prev) continue;
#ifdef MCRNN_INJECT_MIX_TRANSPOSE_BUG
    // Mutation-testing build: accumulates dW_2 transposed.
    if (!lp.freeze_mix && j == 2) outer_acc(grad_mix[1], inv_m, *prev, grad);
    else
#endif
    if (!lp.freeze_mix) outer_acc(grad_mix[static_cast<std::size_t>(j - 1)], inv_m, grad, *prev);
    if (src >= tape.first_step) {
      matvec_transposed_acc(lp.W(j), grad, inv_m, grad_states[static_cast<std::size_t>(src - tape.first_step)]);
    }
  }
}

}  // namespace detail

// Reverse-mode pass over one window. States carried in from earlier windows
// are treated as constants.
template <typename T>
BasicLayerBackward<T> layer_backward(const BasicLayerParams<T>& lp, const BasicStepTape<T>& tape,
                                     const std::vector<BasicVector<T>>& grad_outputs, int workers = 1) {
  using Vec = BasicVector<T>;
  const int K = lp.channels();
  const std::size_t T_len = tape.inputs.size();
  const std::size_t H = lp.hidden_dim();
  if (tape.topo != lp.topo || tape.hidden_dim != H || tape.input_dim != lp.input_dim() ||
      tape.kind != lp.cell.kind || tape.channels.size() != static_cast<std::size_t>(K))
    throw ConsistencyError("layer_backward: tape was not produced by these parameters");
  if (grad_outputs.size() != T_len)
    throw ShapeError("layer_backward: " + std::to_string(grad_outputs.size()) +
                     " output gradients for " + std::to_string(T_len) + " steps");
  const bool lstm = lp.cell.is_lstm();
  const T one(1);

  BasicLayerBackward<T> out;
  out.grads = lp.zeros_like();
  out.grad_inputs.assign(T_len, Vec(lp.input_dim()));

  std::vector<std::vector<Vec>> grad_h(static_cast<std::size_t>(K), std::vector<Vec>(T_len, Vec(H)));

  // Attention and aggregation, step by step.
  for (std::size_t t = 0; t < T_len; ++t) {
    const Vec& g = grad_outputs[t];
    if (g.dim() != H) throw ShapeError("layer_backward: output gradient dim mismatch");
    const Vec& alpha = tape.alpha[t];
    Vec grad_alpha(static_cast<std::size_t>(K));
    T weighted = 0;
    for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k) {
      const Vec& h = tape.channels[k].h[t];
      grad_alpha[k] = dot(g, h);
      axpy_inplace(alpha[k], g, grad_h[k][t]);
      weighted += alpha[k] * grad_alpha[k];
    }
    for (std::size_t k = 0; k < static_cast<std::size_t>(K); ++k) {
      const T grad_e = alpha[k] * (grad_alpha[k] - weighted);
      if (grad_e == T(0)) continue;
      const Vec& act = tape.attn_act[t][k];
      axpy_inplace(grad_e, act, out.grads.attn_r);
      Vec grad_z(H);
      for (std::size_t i = 0; i < H; ++i) grad_z[i] = grad_e * lp.attn_r[i] * (one - act[i] * act[i]);
      const Vec& h = tape.channels[k].h[t];
      outer_acc(out.grads.attn_V, one, grad_z, concat(h, tape.inputs[t]));
      const Vec grad_hx = matvec_transposed(lp.attn_V, grad_z);
      for (std::size_t i = 0; i < H; ++i) grad_h[k][t][i] += grad_hx[i];
      for (std::size_t i = 0; i < lp.input_dim(); ++i) out.grad_inputs[t][i] += grad_hx[H + i];
    }
  }

  // Channels, each through time in reverse.
  struct ChannelGrads {
    BasicCellParams<T> cell;
    std::vector<BasicMatrix<T>> mix;
    std::vector<Vec> grad_x;
  };
  std::vector<ChannelGrads> per_channel(static_cast<std::size_t>(K));
  parallel_for(static_cast<std::size_t>(K), workers, [&](std::size_t ci) {
    const int k = static_cast<int>(ci) + 1;
    ChannelGrads& cg = per_channel[ci];
    cg.cell = BasicCellParams<T>::zeros(lp.cell.kind, H, lp.input_dim());
    cg.mix.assign(static_cast<std::size_t>(K), BasicMatrix<T>(H, H));
    cg.grad_x.assign(T_len, Vec(lp.input_dim()));
    const BasicChannelTape<T>& ch = tape.channels[ci];
    std::vector<Vec>& gh = grad_h[ci];
    std::vector<Vec> gc;
    if (lstm) gc.assign(T_len, Vec(H));
    for (std::size_t t = T_len; t-- > 0;) {
      const long step = tape.first_step + static_cast<long>(t);
      const BasicCellGradients<T> cgr = cell_backward(lp.cell, ch.cache[t], gh[t], lstm ? gc[t] : Vec{}, cg.cell);
      axpy_inplace(one, cgr.grad_x, cg.grad_x[t]);
      detail::mix_backward(lp, tape, k, step, cgr.grad_s, false, cg.mix, gh);
      if (lstm) {
        if (lp.mix_cell_state) {
          detail::mix_backward(lp, tape, k, step, cgr.grad_c_prev, true, cg.mix, gc);
        } else if (t > 0) {
          axpy_inplace(one, cgr.grad_c_prev, gc[t - 1]);
        }
      }
    }
  });

  auto add = [](std::span<T> dst, std::span<const T> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  };
  for (const auto& cg : per_channel) {
    add(out.grads.cell.bias.values(), cg.cell.bias.values());
    add(out.grads.cell.input_weights.values(), cg.cell.input_weights.values());
    add(out.grads.cell.recurrent_weights.values(), cg.cell.recurrent_weights.values());
    for (std::size_t j = 0; j < static_cast<std::size_t>(K); ++j) add(out.grads.mix[j].values(), cg.mix[j].values());
    for (std::size_t t = 0; t < T_len; ++t) axpy_inplace(one, cg.grad_x[t], out.grad_inputs[t]);
  }
  return out;
}

}  // namespace mcrnn
