#pragma once

// SGD with global-norm clipping, a plateau learning-rate schedule and a
// truncated-BPTT epoch loop.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mcrnn/data.hpp"
#include "mcrnn/errors.hpp"
#include "mcrnn/model.hpp"

namespace mcrnn {

struct OptimConfig {
  double lr = 1.0;
  double clip = 5.0;          // global L2 norm
  std::size_t window = 35;    // tbptt window
  std::size_t batch_size = 16;
  int patience = 1;
  int halvings = 6;
  int max_epochs = 10;
  double momentum = 0.0;
  std::uint64_t seed = 1;

  void validate(int block_size) const {
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (!(clip > 0.0)) throw ConfigError("clip must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (window < static_cast<std::size_t>(block_size))
      throw ConfigError("window must be >= block_size");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (halvings < 1) throw ConfigError("halvings must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  }
};

struct TrainState {
  std::uint64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double best_val = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  int halvings = 0;
  bool stopped = false;
  std::uint64_t seed = 0;

  static TrainState start(const OptimConfig& cfg) {
    TrainState s;
    s.lr = cfg.lr;
    s.seed = cfg.seed;
    return s;
  }
};

// Pairs each tensor of `a` with the same tensor of `b`.
template <typename Fn>
void zip_tensors(Model& a, const Model& b, Fn&& fn) {
  std::vector<std::span<const double>> bs;
  visit_tensors(b, [&](const std::string&, std::span<const double> v, bool) { bs.push_back(v); });
  std::size_t i = 0;
  visit_tensors(a, [&](const std::string& name, std::span<double> v, bool trainable) {
    if (i >= bs.size() || bs[i].size() != v.size()) throw ShapeError("tensor layout mismatch at " + name);
    fn(name, v, bs[i], trainable);
    ++i;
  });
  if (i != bs.size()) throw ShapeError("tensor count mismatch");
}

inline double global_norm(const Model& grads) {
  double s = 0.0;
  visit_tensors(grads, [&](const std::string&, std::span<const double> v, bool trainable) {
    if (trainable)
      for (double x : v) s += x * x;
  });
  return std::sqrt(s);
}

// Returns the norm before clipping.
inline double clip_gradients(Model& grads, double threshold) {
  if (!(threshold > 0.0)) throw ArgumentError("clip_gradients: threshold must be > 0");
  const double g = global_norm(grads);
  if (!std::isfinite(g)) throw NumericError("non-finite gradient norm");
  if (g > threshold) {
    const double scale = threshold / g;
    visit_tensors(grads, [&](const std::string&, std::span<double> v, bool) {
      for (double& x : v) x *= scale;
    });
  }
  return g;
}

// p <- p - lr * g, or heavy-ball p <- p - lr * v with v <- momentum * v + g.
inline void sgd_step(Model& params, const Model& grads, double lr, double momentum = 0.0, Model* velocity = nullptr) {
  if (momentum > 0.0 && !velocity) throw ArgumentError("sgd_step: momentum needs a velocity buffer");
  if (momentum > 0.0) {
    zip_tensors(*velocity, grads, [&](const std::string&, std::span<double> v, std::span<const double> g, bool) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = momentum * v[i] + g[i];
    });
  }
  const Model& step = momentum > 0.0 ? *velocity : grads;
  zip_tensors(params, step, [&](const std::string&, std::span<double> p, std::span<const double> g, bool trainable) {
    if (!trainable) return;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
  });
}

// Strict improvement resets the counter; `patience` evaluations without one
// halve the rate. Returns true when the rate was halved.
inline bool plateau_schedule(TrainState& s, double val_loss, int patience, int halvings_budget) {
  if (!std::isfinite(val_loss)) throw NumericError("non-finite validation loss");
  if (val_loss < s.best_val) {
    s.best_val = val_loss;
    s.since_improvement = 0;
    return false;
  }
  if (++s.since_improvement < patience) return false;
  s.lr /= 2.0;
  s.since_improvement = 0;
  ++s.halvings;
  if (s.halvings >= halvings_budget) s.stopped = true;
  return true;
}

inline bool plateau_schedule(TrainState& s, double val_loss, const OptimConfig& cfg) {
  return plateau_schedule(s, val_loss, cfg.patience, cfg.halvings);
}

// ---------------------------------------------------------------- batch sources

// A finite, re-iterable sequence of batches per epoch. When carries_state()
// is true, consecutive batches continue the same lanes and the hidden state
// flows across them (gradients do not).
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual std::size_t batches(int epoch) const = 0;
  virtual Batch batch(int epoch, std::size_t index) const = 0;
  virtual bool carries_state() const = 0;
};

class LmSource final : public BatchSource {
 public:
  LmSource(std::vector<int> ids, std::size_t batch, std::size_t window, std::size_t limit = 0)
      : stream_(std::move(ids), batch, window), limit_(limit) {}

  std::size_t batches(int) const override {
    return limit_ ? std::min(limit_, stream_.windows()) : stream_.windows();
  }
  Batch batch(int, std::size_t index) const override { return stream_.batch(index); }
  bool carries_state() const override { return true; }
  const LmStream& stream() const { return stream_; }

 private:
  LmStream stream_;
  std::size_t limit_;
};

// Fresh instances every batch; `offset` separates train and held-out streams
// drawn from the same spec.
class SyntheticSource final : public BatchSource {
 public:
  SyntheticSource(SyntheticSpec spec, std::size_t batch, std::size_t per_epoch, bool fixed = false)
      : spec_(spec), batch_(batch), per_epoch_(per_epoch), fixed_(fixed) {
    spec_.validate();
    if (batch_ < 1) throw ArgumentError("SyntheticSource: batch must be >= 1");
  }

  std::size_t batches(int) const override { return per_epoch_; }
  Batch batch(int epoch, std::size_t index) const override {
    const std::uint64_t e = fixed_ ? 0 : static_cast<std::uint64_t>(epoch);
    return synthetic_batch(spec_, batch_, e * per_epoch_ + index);
  }
  bool carries_state() const override { return false; }

 private:
  SyntheticSpec spec_;
  std::size_t batch_;
  std::size_t per_epoch_;
  bool fixed_;
};

// ---------------------------------------------------------------- loops

struct EpochStats {
  double loss = 0.0;  // mean over the epoch, weighted by targets
  std::size_t steps = 0;
};

inline EpochStats train_epoch(Model& m, const BatchSource& data, const OptimConfig& cfg, TrainState& state,
                              int workers = 1, Model* velocity = nullptr) {
  const std::size_t n = data.batches(state.epoch);
  if (n == 0) throw DataError("training stream is empty");
  std::vector<ModelState> carry;
  double loss_sum = 0.0, weight = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Batch b = data.batch(state.epoch, i);
    const bool use_carry = data.carries_state() && !carry.empty();
    ForwardResult fwd = forward_loss(m, b, Mode::train, mix_seed(state.seed, state.step), use_carry ? &carry : nullptr,
                                     workers);
    Model g = backward(m, fwd, workers);
    clip_gradients(g, cfg.clip);
    sgd_step(m, g, state.lr, cfg.momentum, velocity);
    if (data.carries_state()) carry = std::move(fwd.final_states);
    loss_sum += fwd.loss * fwd.total_weight;
    weight += fwd.total_weight;
    ++state.step;
  }
  ++state.epoch;
  return {loss_sum / weight, n};
}

struct EvalResult {
  double loss = 0.0;
  double total_weight = 0.0;
};

inline EvalResult evaluate(const Model& m, const BatchSource& data, int workers = 1) {
  const std::size_t n = data.batches(0);
  if (n == 0) throw DataError("evaluation stream is empty");
  std::vector<ModelState> carry;
  double loss_sum = 0.0, weight = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Batch b = data.batch(0, i);
    const bool use_carry = data.carries_state() && !carry.empty();
    ForwardResult fwd = forward_loss(m, b, Mode::eval, 0, use_carry ? &carry : nullptr, workers);
    if (data.carries_state()) carry = std::move(fwd.final_states);
    loss_sum += fwd.loss * fwd.total_weight;
    weight += fwd.total_weight;
  }
  return {loss_sum / weight, weight};
}

// ---------------------------------------------------------------- metrics log

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// epoch,step,lr,train_loss,val_loss,val_ppl,wall_time. Wall time is "-"
// unless enabled, so logs of identical runs compare byte for byte.
class MetricsLog {
 public:
  static constexpr const char* header = "epoch,step,lr,train_loss,val_loss,val_ppl,wall_time";

  MetricsLog(const std::string& path, bool wall_time)
      : out_(path, std::ios::binary | std::ios::trunc), wall_time_(wall_time),
        start_(std::chrono::steady_clock::now()) {
    if (!out_) throw DataError("cannot write metrics log '" + path + "'");
    out_ << header << "\n";
    out_.flush();
  }

  void record(int epoch, std::uint64_t step, double lr, double train_loss, double val_loss, double val_ppl) {
    std::string wall = "-";
    if (wall_time_) {
      const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start_;
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3f", d.count());
      wall = buf;
    }
    out_ << epoch << "," << step << "," << format_double(lr) << "," << format_double(train_loss) << ","
         << format_double(val_loss) << "," << format_double(val_ppl) << "," << wall << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
  bool wall_time_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace mcrnn
