#pragma once

// Recurrent cell functions h = f(s, x) with exact reverse-mode gradients.
// The temporal input s takes the place of the previous hidden state. For the
// LSTM the cell state c_prev is passed separately by the caller.

#include <cmath>
#include <string>

#include "mcrnn/errors.hpp"
#include "mcrnn/numerics.hpp"

namespace mcrnn {

enum class CellKind { vanilla, lstm };

inline const char* to_string(CellKind kind) { return kind == CellKind::lstm ? "lstm" : "vanilla"; }

inline CellKind parse_cell_kind(const std::string& s) {
  if (s == "vanilla" || s == "rnn" || s == "tanh") return CellKind::vanilla;
  if (s == "lstm") return CellKind::lstm;
  throw ConfigError("unknown cell kind '" + s + "' (expected vanilla|lstm)");
}

inline std::size_t gate_count(CellKind kind) { return kind == CellKind::lstm ? 4 : 1; }

// LSTM rows are stacked in gate order: input, forget, candidate, output.
template <typename T>
struct BasicCellParams {
  CellKind kind = CellKind::vanilla;
  std::size_t hidden_dim = 0;
  std::size_t input_dim = 0;
  BasicMatrix<T> input_weights;      // (G*N_h) x N_x
  BasicMatrix<T> recurrent_weights;  // (G*N_h) x N_h
  BasicVector<T> bias;               // G*N_h

  static BasicCellParams zeros(CellKind kind, std::size_t hidden_dim, std::size_t input_dim) {
    const std::size_t g = gate_count(kind) * hidden_dim;
    BasicCellParams p;
    p.kind = kind;
    p.hidden_dim = hidden_dim;
    p.input_dim = input_dim;
    p.input_weights = BasicMatrix<T>(g, input_dim);
    p.recurrent_weights = BasicMatrix<T>(g, hidden_dim);
    p.bias = BasicVector<T>(g);
    return p;
  }

  // uniform(-1/sqrt(N_h), 1/sqrt(N_h)); LSTM forget-gate bias starts at 1.
  static BasicCellParams init(CellKind kind, std::size_t hidden_dim, std::size_t input_dim, Rng& rng) {
    BasicCellParams p = zeros(kind, hidden_dim, input_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    rng.fill_uniform(p.input_weights.values(), bound);
    rng.fill_uniform(p.recurrent_weights.values(), bound);
    rng.fill_uniform(p.bias.values(), bound);
    if (kind == CellKind::lstm)
      for (std::size_t i = 0; i < hidden_dim; ++i) p.bias[hidden_dim + i] = T(1);
    return p;
  }

  bool is_lstm() const noexcept { return kind == CellKind::lstm; }

  template <typename U>
  BasicCellParams<U> cast() const {
    BasicCellParams<U> p;
    p.kind = kind;
    p.hidden_dim = hidden_dim;
    p.input_dim = input_dim;
    p.input_weights = input_weights.template cast<U>();
    p.recurrent_weights = recurrent_weights.template cast<U>();
    p.bias = bias.template cast<U>();
    return p;
  }
};

template <typename T>
struct BasicCellState {
  BasicVector<T> h;
  BasicVector<T> c;  // empty for vanilla cells
};

// Everything cell_backward needs. `act` holds post-activation gate values
// (vanilla: h itself; lstm: i, f, g, o stacked).
template <typename T>
struct BasicCellCache {
  CellKind kind = CellKind::vanilla;
  BasicVector<T> s;
  BasicVector<T> x;
  BasicVector<T> c_prev;
  BasicVector<T> act;
  BasicVector<T> tanh_c;
};

template <typename T>
struct BasicCellStep {
  BasicCellState<T> state;
  BasicCellCache<T> cache;
};

template <typename T>
struct BasicCellGradients {
  BasicVector<T> grad_s;
  BasicVector<T> grad_x;
  BasicVector<T> grad_c_prev;  // empty for vanilla cells
};

using CellParams = BasicCellParams<double>;
using CellState = BasicCellState<double>;
using CellCache = BasicCellCache<double>;
using CellStep = BasicCellStep<double>;
using CellGradients = BasicCellGradients<double>;

template <typename T>
BasicCellStep<T> cell_forward(const BasicCellParams<T>& p, const BasicVector<T>& s, const BasicVector<T>& x,
                              const BasicVector<T>& c_prev = {}) {
  const std::size_t H = p.hidden_dim;
  if (s.dim() != H) throw ShapeError("cell_forward: temporal input dim " + std::to_string(s.dim()) +
                                     " vs hidden dim " + std::to_string(H));
  if (x.dim() != p.input_dim)
    throw ShapeError("cell_forward: input dim " + std::to_string(x.dim()) + " vs " +
                     std::to_string(p.input_dim));

  BasicCellStep<T> out;
  out.cache.kind = p.kind;
  out.cache.s = s;
  out.cache.x = x;

  BasicVector<T> pre = p.bias;
  matvec_acc(p.input_weights, x, T(1), pre);
  matvec_acc(p.recurrent_weights, s, T(1), pre);

  if (!p.is_lstm()) {
    out.cache.act = tanh_vec(pre);
    out.state.h = out.cache.act;
    return out;
  }

  const BasicVector<T> prev = c_prev.empty() ? BasicVector<T>(H) : c_prev;
  if (prev.dim() != H) throw ShapeError("cell_forward: cell state dim mismatch");
  BasicVector<T> act(4 * H);
  for (std::size_t i = 0; i < H; ++i) {
    act[i] = sigmoid(pre[i]);
    act[H + i] = sigmoid(pre[H + i]);
    act[2 * H + i] = scalar::tanh(pre[2 * H + i]);
    act[3 * H + i] = sigmoid(pre[3 * H + i]);
  }
  BasicVector<T> c(H), tc(H), h(H);
  for (std::size_t i = 0; i < H; ++i) {
    c[i] = act[H + i] * prev[i] + act[i] * act[2 * H + i];
    tc[i] = scalar::tanh(c[i]);
    h[i] = act[3 * H + i] * tc[i];
  }
  out.cache.c_prev = prev;
  out.cache.act = std::move(act);
  out.cache.tanh_c = tc;
  out.state.h = std::move(h);
  out.state.c = std::move(c);
  return out;
}

// Accumulates parameter gradients into `grads` (same shapes as `p`) and
// returns gradients for the cell inputs. `grad_c_next` is dL/dc from later
// consumers of this step's cell state; it may be empty (treated as zero).
template <typename T>
BasicCellGradients<T> cell_backward(const BasicCellParams<T>& p, const BasicCellCache<T>& cache,
                                    const BasicVector<T>& grad_h, const BasicVector<T>& grad_c_next,
                                    BasicCellParams<T>& grads) {
  const std::size_t H = p.hidden_dim;
  if (cache.kind != p.kind || cache.s.dim() != H || cache.x.dim() != p.input_dim)
    throw ConsistencyError("cell_backward: cache does not match cell parameters");
  if (grads.kind != p.kind || grads.bias.dim() != p.bias.dim())
    throw ConsistencyError("cell_backward: gradient buffer does not match cell parameters");
  if (grad_h.dim() != H) throw ShapeError("cell_backward: grad_h dim mismatch");

  const T one(1);
  BasicVector<T> dpre(gate_count(p.kind) * H);
  BasicCellGradients<T> out;
  if (!p.is_lstm()) {
    for (std::size_t i = 0; i < H; ++i) dpre[i] = grad_h[i] * (one - cache.act[i] * cache.act[i]);
  } else {
    if (!grad_c_next.empty() && grad_c_next.dim() != H)
      throw ShapeError("cell_backward: grad_c dim mismatch");
    out.grad_c_prev = BasicVector<T>(H);
    const BasicVector<T>& a = cache.act;
    for (std::size_t i = 0; i < H; ++i) {
      const T gi = a[i], gf = a[H + i], gg = a[2 * H + i], go = a[3 * H + i];
      const T tc = cache.tanh_c[i];
      T dc = grad_h[i] * go * (one - tc * tc);
      if (!grad_c_next.empty()) dc += grad_c_next[i];
      dpre[i] = dc * gg * gi * (one - gi);
      dpre[H + i] = dc * cache.c_prev[i] * gf * (one - gf);
      dpre[2 * H + i] = dc * gi * (one - gg * gg);
      dpre[3 * H + i] = grad_h[i] * tc * go * (one - go);
      out.grad_c_prev[i] = dc * gf;
    }
  }
  axpy_inplace(one, dpre, grads.bias);
  outer_acc(grads.input_weights, one, dpre, cache.x);
  outer_acc(grads.recurrent_weights, one, dpre, cache.s);
  out.grad_x = matvec_transposed(p.input_weights, dpre);
  out.grad_s = matvec_transposed(p.recurrent_weights, dpre);
  return out;
}

}  // namespace mcrnn
