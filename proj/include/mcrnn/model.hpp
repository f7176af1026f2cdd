#pragma once

// Sequence model: token embedding (or raw feature vectors), a stack of
// multi-channel layers with inverted dropout between them, and either a
// softmax cross-entropy head (per-step targets) or a scalar regression head
// (one target at the final step, squared error).

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mcrnn/cells.hpp"
#include "mcrnn/errors.hpp"
#include "mcrnn/layer.hpp"
#include "mcrnn/numerics.hpp"
#include "mcrnn/topology.hpp"

namespace mcrnn {

enum class InputKind { tokens, features };
enum class HeadKind { softmax, regression };

struct ModelConfig {
  InputKind input = InputKind::tokens;
  HeadKind head = HeadKind::softmax;
  std::size_t vocab_size = 0;   // tokens input and/or softmax head
  std::size_t feature_dim = 0;  // features input
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 16;
  int layers = 1;
  int block_size = 4;
  CellKind cell = CellKind::lstm;
  bool tie_weights = false;
  double dropout = 0.0;
  bool mix_cell_state = false;
  bool conventional = false;  // W_1 = I frozen: a plain recurrent layer (needs block_size 2)
  bool zero_head = false;     // projection and bias start at zero (uniform predictor)

  std::size_t layer_input_dim(int layer) const {
    if (layer > 0) return hidden_dim;
    return input == InputKind::tokens ? embed_dim : feature_dim;
  }

  void validate() const {
    if (layers < 1) throw ConfigError("layers must be >= 1");
    if (block_size < 2) throw ConfigError("block_size must be >= 2");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (input == InputKind::tokens && (vocab_size < 1 || embed_dim < 1))
      throw ConfigError("token input needs vocab_size and embed_dim >= 1");
    if (input == InputKind::features && feature_dim < 1)
      throw ConfigError("feature input needs feature_dim >= 1");
    if (head == HeadKind::softmax && vocab_size < 1) throw ConfigError("softmax head needs vocab_size >= 1");
    if (tie_weights) {
      if (input != InputKind::tokens || head != HeadKind::softmax)
        throw ConfigError("tie_weights needs token input and softmax head");
      if (embed_dim != hidden_dim) throw ConfigError("tie_weights needs embed_dim == hidden_dim");
    }
    if (conventional && block_size != 2) throw ConfigError("conventional baseline needs block_size 2");
  }
};

template <typename T>
struct BasicModel {
  using scalar_type = T;

  ModelConfig config;
  BasicMatrix<T> embedding;  // V x N_e (token input only)
  std::vector<BasicLayerParams<T>> layers;
  BasicMatrix<T> projection;       // V x N_h (softmax, untied) or 1 x N_h (regression); empty when tied
  BasicVector<T> projection_bias;  // V or 1

  const BasicMatrix<T>& output_weights() const { return config.tie_weights ? embedding : projection; }
  BasicMatrix<T>& output_weights() { return config.tie_weights ? embedding : projection; }

  static BasicModel zeros(const ModelConfig& cfg) {
    cfg.validate();
    BasicModel m;
    m.config = cfg;
    if (cfg.input == InputKind::tokens) m.embedding = BasicMatrix<T>(cfg.vocab_size, cfg.embed_dim);
    const Topology topo(cfg.block_size);
    for (int l = 0; l < cfg.layers; ++l) {
      auto lp = BasicLayerParams<T>::zeros(topo, cfg.cell, cfg.hidden_dim, cfg.layer_input_dim(l));
      lp.mix_cell_state = cfg.mix_cell_state;
      lp.freeze_mix = cfg.conventional;
      m.layers.push_back(std::move(lp));
    }
    const std::size_t outputs = cfg.head == HeadKind::softmax ? cfg.vocab_size : 1;
    if (!cfg.tie_weights) m.projection = BasicMatrix<T>(outputs, cfg.hidden_dim);
    m.projection_bias = BasicVector<T>(outputs);
    return m;
  }

  static BasicModel init(const ModelConfig& cfg, std::uint64_t seed) {
    BasicModel m = zeros(cfg);
    Rng rng(seed);
    rng.fill_uniform(m.embedding.values(), 0.1);
    const Topology topo(cfg.block_size);
    for (int l = 0; l < cfg.layers; ++l) {
      auto& lp = m.layers[static_cast<std::size_t>(l)];
      lp = BasicLayerParams<T>::init(topo, cfg.cell, cfg.hidden_dim, cfg.layer_input_dim(l), rng,
                                     cfg.conventional ? 0.0 : 0.01);
      lp.mix_cell_state = cfg.mix_cell_state;
      lp.freeze_mix = cfg.conventional;
    }
    if (!cfg.tie_weights && !cfg.zero_head)
      rng.fill_uniform(m.projection.values(), 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim)));
    return m;
  }

  BasicModel zeros_like() const { return zeros(config); }

  template <typename U>
  BasicModel<U> cast() const {
    BasicModel<U> m;
    m.config = config;
    m.embedding = embedding.template cast<U>();
    for (const auto& lp : layers) m.layers.push_back(lp.template cast<U>());
    m.projection = projection.template cast<U>();
    m.projection_bias = projection_bias.template cast<U>();
    return m;
  }
};

using Model = BasicModel<double>;

template <typename M>
concept ModelLike = requires { typename std::remove_const_t<M>::scalar_type; } &&
                    std::is_same_v<std::remove_const_t<M>, BasicModel<typename std::remove_const_t<M>::scalar_type>>;

// Visits every tensor as (name, values, trainable). Works for const and
// non-const models; gradient buffers share the layout of their model.
template <ModelLike M, typename Fn>
void visit_tensors(M& m, Fn&& fn) {
  if (m.config.input == InputKind::tokens) fn(std::string("embedding"), m.embedding.values(), true);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& lp = m.layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    fn(p + "cell.input_weights", lp.cell.input_weights.values(), true);
    fn(p + "cell.recurrent_weights", lp.cell.recurrent_weights.values(), true);
    fn(p + "cell.bias", lp.cell.bias.values(), true);
    for (std::size_t j = 0; j < lp.mix.size(); ++j)
      fn(p + "mix.W" + std::to_string(j + 1), lp.mix[j].values(), !lp.freeze_mix);
    fn(p + "attn.r", lp.attn_r.values(), true);
    fn(p + "attn.V", lp.attn_V.values(), true);
  }
  if (!m.config.tie_weights) fn(std::string("projection"), m.projection.values(), true);
  fn(std::string("projection_bias"), m.projection_bias.values(), true);
}

// Parameters that can influence the loss: frozen mixing matrices and the
// attention module of a single-channel layer (softmax over one logit is
// constant) are excluded.
inline std::size_t effective_parameter_count(const Model& m) {
  std::size_t total = 0;
  visit_tensors(m, [&](const std::string& name, std::span<const double> v, bool trainable) {
    if (!trainable) return;
    if (m.config.block_size == 2 && name.find(".attn.") != std::string::npos) return;
    total += v.size();
  });
  return total;
}

struct Lane {
  std::vector<int> tokens;        // token input
  std::vector<Vector> features;   // feature input
  std::vector<int> targets;       // softmax head, one per step
  std::vector<double> weights;    // per-step loss weight; empty means all ones
  double target_value = 0.0;      // regression head, final step

  std::size_t length(InputKind kind) const {
    return kind == InputKind::tokens ? tokens.size() : features.size();
  }
};

struct Batch {
  std::vector<Lane> lanes;
};

template <typename T>
using BasicModelState = std::vector<BasicLayerState<T>>;  // one per layer
using ModelState = BasicModelState<double>;

enum class Mode { train, eval };

template <typename T>
struct BasicLaneTape {
  std::vector<int> tokens;
  std::vector<BasicStepTape<T>> layers;
  std::vector<std::vector<BasicVector<T>>> keep_scale;  // [layer][t]; empty without dropout
  std::vector<BasicVector<T>> top;                      // head inputs
  std::vector<BasicVector<T>> probs;                    // softmax head: [t], empty where weight is 0
  std::vector<double> weights;
  std::vector<int> targets;
  T prediction = 0;  // regression head
  double target_value = 0.0;
};

template <typename T>
struct BasicForwardResult {
  T loss = 0;                 // mean per weighted token (softmax) or per lane (regression)
  double total_weight = 0.0;  // normalizer used for `loss`
  std::vector<BasicLaneTape<T>> lanes;
  std::vector<BasicModelState<T>> final_states;
};

using LaneTape = BasicLaneTape<double>;
using ForwardResult = BasicForwardResult<double>;

inline double perplexity(double loss) {
  if (!(loss >= 0.0)) throw ArgumentError("perplexity: loss must be >= 0");
  return std::exp(loss);
}

namespace detail {

template <typename T>
std::vector<BasicVector<T>> lane_inputs(const BasicModel<T>& m, const Lane& lane) {
  std::vector<BasicVector<T>> xs;
  if (m.config.input == InputKind::tokens) {
    xs.reserve(lane.tokens.size());
    for (int id : lane.tokens) {
      if (id < 0 || static_cast<std::size_t>(id) >= m.config.vocab_size)
        throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(m.config.vocab_size));
      const auto row = m.embedding.row(static_cast<std::size_t>(id));
      xs.emplace_back(std::vector<T>(row.begin(), row.end()));
    }
  } else {
    for (const auto& f : lane.features) {
      if (f.dim() != m.config.feature_dim) throw DataError("feature vector has wrong dimension");
      xs.push_back(f.template cast<T>());
    }
  }
  return xs;
}

}  // namespace detail

template <typename T>
BasicForwardResult<T> forward_loss(const BasicModel<T>& m, const Batch& batch, Mode mode, std::uint64_t seed,
                                   const std::type_identity_t<std::vector<BasicModelState<T>>>* init = nullptr,
                                   int workers = 1) {
  using Vec = BasicVector<T>;
  const auto& cfg = m.config;
  if (batch.lanes.empty()) throw DataError("empty batch");
  if (init && init->size() != batch.lanes.size())
    throw ConsistencyError("forward_loss: initial states do not match batch lanes");
  BasicForwardResult<T> res;
  res.lanes.resize(batch.lanes.size());
  res.final_states.resize(batch.lanes.size());
  const bool dropout = mode == Mode::train && cfg.dropout > 0.0;
  T loss_sum = 0;

  for (std::size_t b = 0; b < batch.lanes.size(); ++b) {
    const Lane& lane = batch.lanes[b];
    BasicLaneTape<T>& lt = res.lanes[b];
    const std::size_t T_len = lane.length(cfg.input);
    if (T_len == 0) throw DataError("lane " + std::to_string(b) + " is empty");
    if (cfg.head == HeadKind::softmax && lane.targets.size() != T_len)
      throw DataError("lane " + std::to_string(b) + ": targets/inputs length mismatch");
    if (!lane.weights.empty() && lane.weights.size() != T_len)
      throw DataError("lane " + std::to_string(b) + ": weights/inputs length mismatch");

    std::vector<Vec> xs = detail::lane_inputs(m, lane);
    lt.tokens = lane.tokens;
    Rng drop_rng(mix_seed(seed, b));
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const BasicLayerState<T>* st = init && !(*init)[b].empty() ? &(*init)[b][l] : nullptr;
      BasicLayerForward<T> lf = layer_forward(m.layers[l], xs, st, workers);
      res.final_states[b].push_back(std::move(lf.final_state));
      xs = std::move(lf.outputs);
      lt.layers.push_back(std::move(lf.tape));
      if (dropout) {
        const T keep = T(1) - T(cfg.dropout);
        std::vector<Vec> scale(T_len, Vec(cfg.hidden_dim));
        for (std::size_t t = 0; t < T_len; ++t)
          for (std::size_t i = 0; i < cfg.hidden_dim; ++i) {
            scale[t][i] = drop_rng.bernoulli(static_cast<double>(keep)) ? T(1) / keep : T(0);
            xs[t][i] *= scale[t][i];
          }
        lt.keep_scale.push_back(std::move(scale));
      }
    }
    lt.top = std::move(xs);

    const BasicMatrix<T>& W = m.output_weights();
    if (cfg.head == HeadKind::softmax) {
      lt.probs.resize(T_len);
      lt.weights.assign(T_len, 1.0);
      if (!lane.weights.empty()) lt.weights = lane.weights;
      lt.targets = lane.targets;
      for (std::size_t t = 0; t < T_len; ++t) {
        const double w = lt.weights[t];
        if (w == 0.0) continue;
        const int y = lane.targets[t];
        if (y < 0 || static_cast<std::size_t>(y) >= cfg.vocab_size)
          throw DataError("target id " + std::to_string(y) + " outside vocabulary");
        Vec logits = m.projection_bias;
        matvec_acc(W, lt.top[t], T(1), logits);
        const T lse = log_sum_exp(logits);
        loss_sum += T(w) * (lse - logits[static_cast<std::size_t>(y)]);
        res.total_weight += w;
        for (std::size_t v = 0; v < logits.dim(); ++v) logits[v] = scalar::exp(logits[v] - lse);
        lt.probs[t] = std::move(logits);
      }
    } else {
      lt.prediction = m.projection_bias[0] + detail::dot_unrolled(W.row(0).data(), lt.top.back().data(), cfg.hidden_dim);
      lt.target_value = lane.target_value;
      const T err = lt.prediction - T(lane.target_value);
      loss_sum += err * err;
      res.total_weight += 1.0;
    }
  }
  if (res.total_weight <= 0.0) throw DataError("batch has no weighted targets");
  res.loss = loss_sum / T(res.total_weight);
  if (!scalar::isfinite(res.loss)) throw NumericError("non-finite loss");
  return res;
}

// Exact gradient of ForwardResult::loss with respect to every tensor.
template <typename T>
BasicModel<T> backward(const BasicModel<T>& m, const BasicForwardResult<T>& fwd, int workers = 1) {
  using Vec = BasicVector<T>;
  const auto& cfg = m.config;
  BasicModel<T> g = m.zeros_like();
  BasicMatrix<T>& gW = g.output_weights();
  const BasicMatrix<T>& W = m.output_weights();
  const T norm = T(1) / T(fwd.total_weight);

  for (const BasicLaneTape<T>& lt : fwd.lanes) {
    if (lt.layers.size() != m.layers.size())
      throw ConsistencyError("backward: tape depth does not match model");
    const std::size_t T_len = lt.top.size();
    std::vector<Vec> grad(T_len, Vec(cfg.hidden_dim));
    if (cfg.head == HeadKind::softmax) {
      for (std::size_t t = 0; t < T_len; ++t) {
        const double w = lt.weights[t];
        if (w == 0.0) continue;
        Vec d = lt.probs[t];
        d[static_cast<std::size_t>(lt.targets[t])] -= T(1);
        for (std::size_t v = 0; v < d.dim(); ++v) d[v] *= T(w) * norm;
        axpy_inplace(T(1), d, g.projection_bias);
        outer_acc(gW, T(1), d, lt.top[t]);
        matvec_transposed_acc(W, d, T(1), grad[t]);
      }
    } else {
      const T d = T(2) * (lt.prediction - T(lt.target_value)) * norm;
      g.projection_bias[0] += d;
      for (std::size_t i = 0; i < cfg.hidden_dim; ++i) {
        gW(0, i) += d * lt.top.back()[i];
        grad.back()[i] += d * W(0, i);
      }
    }

    for (std::size_t l = m.layers.size(); l-- > 0;) {
      if (!lt.keep_scale.empty())
        for (std::size_t t = 0; t < T_len; ++t)
          for (std::size_t i = 0; i < cfg.hidden_dim; ++i) grad[t][i] *= lt.keep_scale[l][t][i];
      BasicLayerBackward<T> lb = layer_backward(m.layers[l], lt.layers[l], grad, workers);
      auto& dst = g.layers[l];
      auto add = [](std::span<T> a, std::span<const T> b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
      };
      add(dst.cell.input_weights.values(), lb.grads.cell.input_weights.values());
      add(dst.cell.recurrent_weights.values(), lb.grads.cell.recurrent_weights.values());
      add(dst.cell.bias.values(), lb.grads.cell.bias.values());
      for (std::size_t j = 0; j < dst.mix.size(); ++j) add(dst.mix[j].values(), lb.grads.mix[j].values());
      add(dst.attn_r.values(), lb.grads.attn_r.values());
      add(dst.attn_V.values(), lb.grads.attn_V.values());
      grad = std::move(lb.grad_inputs);
    }

    if (cfg.input == InputKind::tokens)
      for (std::size_t t = 0; t < T_len; ++t) {
        auto row = g.embedding.row(static_cast<std::size_t>(lt.tokens[t]));
        for (std::size_t i = 0; i < row.size(); ++i) row[i] += grad[t][i];
      }
  }
  return g;
}

}  // namespace mcrnn
