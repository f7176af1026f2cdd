#pragma once

// Commands behind the CLI: train, eval, gradcheck, inspect-topology and
// export-attention. Each is a function of (config, inputs) to (files, exit code).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcrnn/checkpoint.hpp"
#include "mcrnn/config.hpp"
#include "mcrnn/data.hpp"
#include "mcrnn/errors.hpp"
#include "mcrnn/gradcheck.hpp"
#include "mcrnn/model.hpp"
#include "mcrnn/optim.hpp"
#include "mcrnn/topology.hpp"

namespace mcrnn {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_numeric = 3 };

// Runs `fn` and maps library errors to exit codes, reporting on `err`.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_usage;
  } catch (const ArgumentError& e) {
    err << "usage error: " << e.what() << "\n";
    return exit_usage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return exit_data;
  } catch (const ConsistencyError& e) {
    err << "data error: " << e.what() << "\n";
    return exit_data;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return exit_numeric;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_usage;
  }
}

// ---------------------------------------------------------------- task setup

struct TaskData {
  Vocab vocab;
  std::unique_ptr<BatchSource> train, valid, test;
};

// Held-out synthetic streams use their own seeds so they never overlap training.
inline SyntheticSpec heldout_spec(SyntheticSpec s, std::uint64_t salt) {
  s.seed = mix_seed(s.seed, salt);
  return s;
}

inline std::unique_ptr<BatchSource> lm_source(const RunConfig& rc, const Vocab& vocab, const std::string& path,
                                              std::size_t limit = 0) {
  return std::make_unique<LmSource>(vocab.encode(read_text_file(path)), rc.optim.batch_size, rc.optim.window, limit);
}

// Loads corpora (lm) or prepares generators (copy/adding). A given vocabulary
// (from a checkpoint) is used as is; otherwise it is built from the training split.
inline TaskData load_task(const RunConfig& rc, const Vocab* vocab = nullptr) {
  TaskData d;
  if (rc.task == Task::lm) {
    if (vocab) {
      d.vocab = *vocab;
    } else {
      d.vocab = build_vocab(read_text_file(rc.train_path), rc.level, rc.min_count);
    }
    d.train = lm_source(rc, d.vocab, rc.train_path, rc.epoch_windows);
    d.valid = lm_source(rc, d.vocab, rc.valid_path);
    d.test = lm_source(rc, d.vocab, rc.test_path);
    return d;
  }
  const SyntheticSpec spec = rc.synthetic_spec();
  if (rc.task == Task::copy) {
    std::vector<std::string> toks{"_"};
    for (std::size_t i = 1; i <= spec.alphabet; ++i) toks.push_back("s" + std::to_string(i));
    toks.push_back("?");
    d.vocab = Vocab::from_tokens(TokenLevel::words, toks);
  }
  const std::size_t B = rc.optim.batch_size;
  d.train = std::make_unique<SyntheticSource>(spec, B, rc.steps_per_epoch);
  d.valid = std::make_unique<SyntheticSource>(heldout_spec(spec, 0x7661), B, rc.valid_batches, true);
  d.test = std::make_unique<SyntheticSource>(heldout_spec(spec, 0x7465), B, rc.valid_batches, true);
  return d;
}

inline ModelConfig model_config(const RunConfig& rc, std::size_t vocab_size) {
  ModelConfig m;
  m.embed_dim = rc.embed_dim;
  m.hidden_dim = rc.hidden_dim;
  m.layers = rc.layers;
  m.block_size = rc.block_size;
  m.cell = rc.cell;
  m.dropout = rc.dropout;
  m.mix_cell_state = rc.mix_cell_state;
  m.zero_head = rc.zero_head;
  if (rc.task == Task::adding) {
    m.input = InputKind::features;
    m.head = HeadKind::regression;
    m.feature_dim = 2;
    m.tie_weights = false;
  } else {
    m.vocab_size = vocab_size;
    m.tie_weights = rc.tie_weights;
    if (m.tie_weights) m.embed_dim = m.hidden_dim;
  }
  m.validate();
  return m;
}

// Conventional recurrent layer (n = 2, W_1 = I frozen). With `match`, the
// hidden size is chosen so the effective parameter count is closest to that
// of `mc` (ties go to the smaller size).
inline ModelConfig baseline_config(const ModelConfig& mc, bool match) {
  ModelConfig b = mc;
  b.block_size = 2;
  b.conventional = true;
  if (!match) return b;
  const std::size_t target = effective_parameter_count(Model::zeros(mc));
  std::size_t best_h = b.hidden_dim, best_gap = static_cast<std::size_t>(-1);
  for (std::size_t h = 1; h <= 4 * mc.hidden_dim + 8; ++h) {
    ModelConfig c = b;
    c.hidden_dim = h;
    if (c.tie_weights) c.embed_dim = h;
    const std::size_t n = effective_parameter_count(Model::zeros(c));
    const std::size_t gap = n > target ? n - target : target - n;
    if (gap < best_gap) {
      best_gap = gap;
      best_h = h;
    }
  }
  b.hidden_dim = best_h;
  if (b.tie_weights) b.embed_dim = best_h;
  b.validate();
  return b;
}

inline ModelConfig resolved_model_config(const RunConfig& rc, std::size_t vocab_size) {
  ModelConfig m = model_config(rc, vocab_size);
  return rc.baseline ? baseline_config(m, rc.match_parameters) : m;
}

// Config as stored in checkpoints: fields that must not change the bytes
// of a run (output location, worker count, logging) are normalized.
inline RunConfig portable_config(RunConfig rc) {
  rc.out_dir.clear();
  rc.workers = 1;
  rc.log_wall_time = false;
  return rc;
}

// ---------------------------------------------------------------- train

struct TrainOutcome {
  double best_val = 0.0;
  double final_val = 0.0;  // validation loss after the last epoch
  double test_loss = 0.0;
  std::size_t parameters = 0;
  int epochs = 0;
  std::uint64_t steps = 0;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << text;
}

inline std::string metric_name(Task t) { return t == Task::adding ? "mse" : "ppl"; }

inline double headline_metric(Task t, double loss) { return t == Task::adding ? loss : perplexity(loss); }

// Trains until the plateau schedule or max_epochs stops the run. Writes
// config.txt, vocab.txt (token tasks), metrics.csv, model.ckpt (best by
// validation loss) and summary.json into rc.out_dir. Nothing is written if
// the config or data fail to load.
inline TrainOutcome run_training(RunConfig rc, std::ostream& log) {
  rc.optim.seed = rc.seed;
  rc.validate();
  TaskData data = load_task(rc);
  const ModelConfig mcfg = resolved_model_config(rc, data.vocab.size());

  const std::filesystem::path out(rc.out_dir);
  std::filesystem::create_directories(out);
  write_file(out / "config.txt", serialize_config(rc));
  if (rc.task != Task::adding) write_file(out / "vocab.txt", serialize_vocab(data.vocab));

  Model model = Model::init(mcfg, mix_seed(rc.seed, 0x696e6974));
  std::optional<Model> velocity;
  if (rc.optim.momentum > 0.0) velocity = model.zeros_like();
  TrainState state = TrainState::start(rc.optim);
  state.seed = mix_seed(rc.seed, 0x64726f70);
  MetricsLog metrics((out / "metrics.csv").string(), rc.log_wall_time);

  TrainOutcome res;
  res.parameters = effective_parameter_count(model);
  log << (rc.baseline ? "baseline" : "mc-rnn") << " n=" << mcfg.block_size << " hidden=" << mcfg.hidden_dim
      << " params=" << res.parameters << "\n";
  Checkpoint best{model, data.vocab, portable_config(rc), {}};
  bool have_best = false;
  while (!state.stopped && state.epoch < rc.optim.max_epochs) {
    const EpochStats st = train_epoch(model, *data.train, rc.optim, state, rc.workers, velocity ? &*velocity : nullptr);
    if (!std::isfinite(st.loss)) throw NumericError("non-finite training loss");
    const double val = evaluate(model, *data.valid, rc.workers).loss;
    const double lr_used = state.lr;
    res.final_val = val;
    metrics.record(state.epoch, state.step, lr_used, st.loss, val, perplexity(val));
    log << "epoch " << state.epoch << " step " << state.step << " train " << st.loss << " val " << val << " "
        << metric_name(rc.task) << " " << headline_metric(rc.task, val) << "\n";
    if (!have_best || val < best.meta.val_loss) {
      best.model = model;
      best.meta = {state.epoch, state.step, val};
      have_best = true;
      save_checkpoint((out / "model.ckpt").string(), best);
    }
    plateau_schedule(state, val, rc.optim);
  }

  res.best_val = best.meta.val_loss;
  res.test_loss = evaluate(best.model, *data.test, rc.workers).loss;
  res.epochs = state.epoch;
  res.steps = state.step;
  nlohmann::json s = {{"best_epoch", best.meta.epoch},
                      {"best_val_loss", res.best_val},
                      {"final_val_loss", res.final_val},
                      {"test_loss", res.test_loss},
                      {"test_" + metric_name(rc.task), headline_metric(rc.task, res.test_loss)},
                      {"effective_parameters", res.parameters},
                      {"hidden_dim", mcfg.hidden_dim},
                      {"block_size", mcfg.block_size},
                      {"epochs", res.epochs},
                      {"steps", res.steps}};
  write_file(out / "summary.json", s.dump(2) + "\n");
  log << "test loss " << res.test_loss << " " << metric_name(rc.task) << " " << headline_metric(rc.task, res.test_loss)
      << "\n";
  return res;
}

// ---------------------------------------------------------------- eval

struct EvalOutcome {
  double loss = 0.0;
  double metric = 0.0;  // perplexity, or mse for the adding task
};

inline EvalOutcome run_eval(const std::string& checkpoint, const std::string& split) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const TaskData data = load_task(ck.run, &ck.vocab);
  const BatchSource* src = nullptr;
  if (split == "train") src = data.train.get();
  else if (split == "valid") src = data.valid.get();
  else if (split == "test") src = data.test.get();
  else throw ArgumentError("unknown split '" + split + "' (expected train|valid|test)");
  const double loss = evaluate(ck.model, *src).loss;
  return {loss, headline_metric(ck.run.task, loss)};
}

// ---------------------------------------------------------------- gradcheck

// Random instance shaped by the config's gradcheck keys; the model is
// initialized from the seed so the check is reproducible.
inline GradReport run_gradcheck(const RunConfig& rc) {
  rc.validate();
  const std::size_t V = rc.task == Task::copy ? rc.synthetic_spec().copy_vocab() : rc.gc_vocab;
  const ModelConfig mcfg = resolved_model_config(rc, V);
  const Model model = Model::init(mcfg, mix_seed(rc.seed, 0x696e6974));
  Rng rng(mix_seed(rc.seed, 0x6763));
  Batch batch;
  for (std::size_t b = 0; b < rc.gc_lanes; ++b) {
    Lane lane;
    for (std::size_t t = 0; t < rc.gc_length; ++t) {
      if (mcfg.input == InputKind::tokens) {
        lane.tokens.push_back(static_cast<int>(rng.below(V)));
      } else {
        Vector f(mcfg.feature_dim);
        rng.fill_uniform(f.values(), 1.0);
        lane.features.push_back(f);
      }
      if (mcfg.head == HeadKind::softmax) lane.targets.push_back(static_cast<int>(rng.below(V)));
    }
    lane.target_value = rng.uniform(-1.0, 1.0);
    batch.lanes.push_back(std::move(lane));
  }
  CheckOptions opt;
  opt.threshold = rc.gc_threshold;
  opt.samples = rc.gc_samples;
  opt.seed = rc.seed;
  return check_model(model, batch, opt);
}

// ---------------------------------------------------------------- attention export

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos && !s.empty()) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

struct AttentionRow {
  int layer = 0;    // 1-based
  long step = 0;    // 1-based
  std::string token;
  int channel = 0;  // 1-based
  double alpha = 0.0;
};

// Eval-mode forward over `text` from a zero state; one row per (layer, step, channel).
inline std::vector<AttentionRow> attention_table(const Checkpoint& ck, const std::string& text, std::ostream& warn) {
  const Model& m = ck.model;
  if (m.config.input != InputKind::tokens) throw ArgumentError("attention export needs a token-input model");
  const std::vector<std::string> toks = ck.vocab.tokenize(text);
  if (toks.empty()) throw DataError("text has no tokens");
  std::vector<int> ids;
  std::size_t unk = 0;
  for (const auto& t : toks) {
    ids.push_back(ck.vocab.id(t));
    if (ids.back() == Vocab::unk_id) ++unk;
  }
  if (2 * unk > ids.size())
    warn << "warning: " << unk << " of " << ids.size() << " tokens are not in the vocabulary\n";

  std::vector<Vector> xs;
  for (int id : ids) {
    if (static_cast<std::size_t>(id) >= m.config.vocab_size) throw DataError("token id outside model vocabulary");
    const auto row = m.embedding.row(static_cast<std::size_t>(id));
    xs.emplace_back(std::vector<double>(row.begin(), row.end()));
  }
  std::vector<AttentionRow> rows;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    LayerForward f = layer_forward(m.layers[l], xs);
    for (std::size_t t = 0; t < xs.size(); ++t)
      for (std::size_t k = 0; k < f.tape.alpha[t].dim(); ++k)
        rows.push_back({static_cast<int>(l + 1), static_cast<long>(t + 1), toks[t], static_cast<int>(k + 1),
                        f.tape.alpha[t][k]});
    xs = std::move(f.outputs);
  }
  return rows;
}

inline std::string render_attention(const std::vector<AttentionRow>& rows) {
  std::string out = "layer,step,token,channel,alpha\n";
  for (const auto& r : rows)
    out += std::to_string(r.layer) + "," + std::to_string(r.step) + "," + csv_field(r.token) + "," +
           std::to_string(r.channel) + "," + format_double(r.alpha) + "\n";
  return out;
}

}  // namespace mcrnn
