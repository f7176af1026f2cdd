#pragma once

// Finite-difference gradient oracle. It only ever calls a scalar loss
// function after perturbing one parameter entry, so it shares no code path
// with any analytic backward pass it is used to certify.
//
// With h = 1e-5 the cancellation noise of a double-precision difference is
// about 1e-11 absolute, which swamps the relative error of entries whose
// gradient is below ~1e-5. An entry whose error is not clearly inside the
// threshold is therefore re-differenced on wider copies of the same loss
// (long double, noise ~1e-14, then quad), keeping the last opinion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mcrnn/errors.hpp"
#include "mcrnn/model.hpp"
#include "mcrnn/numerics.hpp"

namespace mcrnn {

using Extended = long double;
using Quad = scalar::quad;
using LossFn = std::function<double()>;

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// Central difference (L(p + h) - L(p - h)) / 2h for one entry, computed in
// the parameter type T; the entry is restored bit-exactly before returning.
template <typename T, typename F>
double numeric_grad(F&& loss, std::span<T> params, std::size_t entry, double h = 1e-5) {
  if (!(h > 0.0)) throw ArgumentError("numeric_grad: step must be > 0");
  if (entry >= params.size()) throw ArgumentError("numeric_grad: entry out of range");
  const T saved = params[entry];
  params[entry] = saved + T(h);
  const T up = static_cast<T>(loss());
  params[entry] = saved - T(h);
  const T down = static_cast<T>(loss());
  params[entry] = saved;
  if (!scalar::isfinite(up) || !scalar::isfinite(down)) throw NumericError("numeric_grad: non-finite loss");
  return static_cast<double>((up - down) / (T(2) * T(h)));
}

struct TensorReport {
  std::string name;
  std::size_t size = 0;
  std::size_t checked = 0;
  double max_rel = 0.0;
  double mean_rel = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradReport {
  std::vector<TensorReport> tensors;
  double threshold = 0.0;
  bool pass = true;

  double max_rel() const {
    double m = 0.0;
    for (const auto& t : tensors) m = std::max(m, t.max_rel);
    return m;
  }

  const TensorReport* worst() const {
    const TensorReport* w = nullptr;
    for (const auto& t : tensors)
      if (!w || t.max_rel > w->max_rel) w = &t;
    return w;
  }
};

template <typename T>
struct BasicCheckedTensor {
  std::string name;
  std::span<T> values;                // perturbed in place
  std::span<const double> analytic;   // same length as values
};
using CheckedTensor = BasicCheckedTensor<double>;
using ExtendedCheckedTensor = BasicCheckedTensor<Extended>;
using QuadCheckedTensor = BasicCheckedTensor<Quad>;

struct CheckOptions {
  double threshold = 1e-6;
  std::size_t samples = 0;  // 0: check every entry
  std::size_t extra_worst = 3;
  double step = 1e-5;
  std::uint64_t seed = 0;
  double escalate_above = 0.1;  // fraction of the threshold that triggers a wider re-difference
};

// Another numeric opinion for (tensor index, entry) from a more precise copy
// of the same loss.
using Refiner = std::function<double(std::size_t, std::size_t)>;

template <typename T, typename F>
Refiner make_refiner(F loss, std::vector<BasicCheckedTensor<T>> tensors, double step) {
  return [loss = std::move(loss), tensors = std::move(tensors), step](std::size_t ti, std::size_t e) {
    return numeric_grad(loss, tensors.at(ti).values, e, step);
  };
}

template <typename T, typename F>
GradReport check_gradients(F&& loss, const std::vector<BasicCheckedTensor<T>>& tensors, const CheckOptions& opt,
                           const std::vector<Refiner>& refiners = {}) {
  const T base = static_cast<T>(loss());
  if (!scalar::isfinite(base)) throw NumericError("gradcheck: non-finite loss");
  if (static_cast<T>(loss()) != base) throw NumericError("gradcheck: loss is not deterministic; freeze stochastic paths");

  GradReport report;
  report.threshold = opt.threshold;
  Rng rng(opt.seed);
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    const auto& t = tensors[ti];
    if (t.values.size() != t.analytic.size())
      throw ConsistencyError("gradcheck: analytic gradient size mismatch for " + t.name);
    TensorReport tr;
    tr.name = t.name;
    tr.size = t.values.size();
    if (tr.size == 0) {
      report.tensors.push_back(tr);
      continue;
    }
    std::vector<std::size_t> entries;
    if (opt.samples == 0 || opt.samples >= tr.size) {
      entries.resize(tr.size);
      std::iota(entries.begin(), entries.end(), std::size_t{0});
    } else {
      for (std::size_t i = 0; i < opt.samples; ++i) entries.push_back(static_cast<std::size_t>(rng.below(tr.size)));
      std::vector<std::size_t> order(tr.size);
      std::iota(order.begin(), order.end(), std::size_t{0});
      const std::size_t extra = std::min(opt.extra_worst, tr.size);
      std::partial_sort(order.begin(), order.begin() + static_cast<long>(extra), order.end(),
                        [&](std::size_t a, std::size_t b) {
                          return std::abs(t.analytic[a]) > std::abs(t.analytic[b]);
                        });
      entries.insert(entries.end(), order.begin(), order.begin() + static_cast<long>(extra));
      std::sort(entries.begin(), entries.end());
      entries.erase(std::unique(entries.begin(), entries.end()), entries.end());
    }
    double total = 0.0;
    for (std::size_t e : entries) {
      double num = numeric_grad(loss, t.values, e, opt.step);
      double rel = relative_error(t.analytic[e], num);
      for (const Refiner& refine : refiners) {
        if (rel <= opt.escalate_above * opt.threshold) break;
        num = refine(ti, e);
        rel = relative_error(t.analytic[e], num);
      }
      total += rel;
      if (tr.checked == 0 || rel > tr.max_rel) {
        tr.max_rel = rel;
        tr.worst_index = e;
        tr.worst_analytic = t.analytic[e];
        tr.worst_numeric = num;
      }
      ++tr.checked;
    }
    tr.mean_rel = total / static_cast<double>(tr.checked);
    report.tensors.push_back(tr);
  }
  report.pass = report.max_rel() <= opt.threshold;
  return report;
}

template <typename T, typename F>
GradReport check_gradients(F&& loss, const std::vector<BasicCheckedTensor<T>>& tensors, const CheckOptions& opt,
                           Refiner refine) {
  return check_gradients(std::forward<F>(loss), tensors, opt, std::vector<Refiner>{std::move(refine)});
}

// Every trainable tensor of `m`, checked against forward_loss in eval mode
// (dropout off) with the analytic gradient from backward(). The numeric side
// perturbs copies of the model: double for the sweep, long double and quad
// for escalation.
inline GradReport check_model(const Model& m, const Batch& batch, const CheckOptions& opt) {
  const Model grads = backward(m, forward_loss(m, batch, Mode::eval, 0));
  std::vector<std::span<const double>> analytic;
  visit_tensors(grads, [&](const std::string&, std::span<const double> v, bool) { analytic.push_back(v); });
  auto tensors_of = [&]<typename T>(BasicModel<T>& copy) {
    std::vector<BasicCheckedTensor<T>> out;
    std::size_t i = 0;
    visit_tensors(copy, [&](const std::string& name, std::span<T> v, bool trainable) {
      if (trainable) out.push_back({name, v, analytic[i]});
      ++i;
    });
    return out;
  };
  Model narrow = m;
  BasicModel<Extended> wide = m.cast<Extended>();
  BasicModel<Quad> quad = m.cast<Quad>();
  const auto loss = [&] { return forward_loss(narrow, batch, Mode::eval, 0).loss; };
  const auto wide_loss = [&] { return forward_loss(wide, batch, Mode::eval, 0).loss; };
  const auto quad_loss = [&] { return forward_loss(quad, batch, Mode::eval, 0).loss; };
  return check_gradients(loss, tensors_of(narrow), opt,
                         {make_refiner(wide_loss, tensors_of(wide), opt.step),
                          make_refiner(quad_loss, tensors_of(quad), opt.step)});
}

namespace detail {

// Sweeps the double copy and escalates through long double and quad copies.
// `make(T{})` builds a copy in precision T, `tensors_of` lists its checked
// tensors and `loss_of` evaluates the loss on it.
template <typename Make, typename Tensors, typename Loss>
GradReport check_precisions(Make make, Tensors tensors_of, Loss loss_of, const CheckOptions& opt) {
  auto narrow = make(double{});
  auto wide = make(Extended{});
  auto quad = make(Quad{});
  return check_gradients([&] { return loss_of(narrow); }, tensors_of(narrow), opt,
                         {make_refiner([&] { return loss_of(wide); }, tensors_of(wide), opt.step),
                          make_refiner([&] { return loss_of(quad); }, tensors_of(quad), opt.step)});
}

template <typename T>
T probe(const std::vector<BasicVector<T>>& outs, const std::vector<BasicVector<T>>& weights) {
  T l = 0;
  for (std::size_t t = 0; t < outs.size(); ++t) l += dot(outs[t], weights[t]);
  return l;
}

}  // namespace detail

// One cell step under the probe loss wh·h + wc·c (the c term for LSTM only).
// Covers the cell weights and the inputs s, x and c_prev.
inline GradReport check_cell(const CellParams& p, const Vector& s, const Vector& x, const Vector& c_prev,
                             const Vector& wh, const Vector& wc, const CheckOptions& opt) {
  const bool lstm = p.is_lstm();
  CellParams grads = CellParams::zeros(p.kind, p.hidden_dim, p.input_dim);
  const CellStep st = cell_forward(p, s, x, c_prev);
  const CellGradients g = cell_backward(p, st.cache, wh, lstm ? wc : Vector{}, grads);
  auto make = [&]<typename T>(T) {
    struct Copy {
      BasicCellParams<T> p;
      BasicVector<T> s, x, c_prev, wh, wc;
    };
    return Copy{p.cast<T>(), s.cast<T>(), x.cast<T>(), c_prev.cast<T>(), wh.cast<T>(), wc.cast<T>()};
  };
  auto tensors_of = [&](auto& c) {
    using T = typename std::remove_reference_t<decltype(c.s)>::value_type;
    std::vector<BasicCheckedTensor<T>> ts{
        {"cell.input_weights", c.p.input_weights.values(), grads.input_weights.values()},
        {"cell.recurrent_weights", c.p.recurrent_weights.values(), grads.recurrent_weights.values()},
        {"cell.bias", c.p.bias.values(), grads.bias.values()},
        {"s", c.s.values(), g.grad_s.values()},
        {"x", c.x.values(), g.grad_x.values()},
    };
    if (lstm && !c.c_prev.empty()) ts.push_back({"c_prev", c.c_prev.values(), g.grad_c_prev.values()});
    return ts;
  };
  auto loss_of = [&](const auto& c) {
    const auto out = cell_forward(c.p, c.s, c.x, c.c_prev);
    auto l = dot(c.wh, out.state.h);
    if (lstm) l += dot(c.wc, out.state.c);
    return l;
  };
  return detail::check_precisions(make, tensors_of, loss_of, opt);
}

// A whole layer over xs under the probe loss sum_t probe_t·output_t, from
// `init` (zero state if null). Covers every trainable layer tensor and the inputs.
inline GradReport check_layer(const LayerParams& lp, const std::vector<Vector>& xs, const std::vector<Vector>& probe,
                              const LayerState* init, const CheckOptions& opt) {
  const LayerForward fwd = layer_forward(lp, xs, init);
  const LayerBackward bwd = layer_backward(lp, fwd.tape, probe);
  auto make = [&]<typename T>(T) {
    struct Copy {
      BasicLayerParams<T> lp;
      std::vector<BasicVector<T>> xs, probe;
      BasicLayerState<T> init;
    };
    return Copy{lp.cast<T>(), cast_all<T>(xs), cast_all<T>(probe), init ? init->cast<T>() : BasicLayerState<T>{}};
  };
  auto tensors_of = [&](auto& c) {
    using T = typename std::remove_reference_t<decltype(c.xs)>::value_type::value_type;
    std::vector<BasicCheckedTensor<T>> ts{
        {"cell.input_weights", c.lp.cell.input_weights.values(), bwd.grads.cell.input_weights.values()},
        {"cell.recurrent_weights", c.lp.cell.recurrent_weights.values(), bwd.grads.cell.recurrent_weights.values()},
        {"cell.bias", c.lp.cell.bias.values(), bwd.grads.cell.bias.values()},
        {"attn.r", c.lp.attn_r.values(), bwd.grads.attn_r.values()},
        {"attn.V", c.lp.attn_V.values(), bwd.grads.attn_V.values()},
    };
    if (!lp.freeze_mix)
      for (std::size_t j = 0; j < lp.mix.size(); ++j)
        ts.push_back({"mix.W" + std::to_string(j + 1), c.lp.mix[j].values(), bwd.grads.mix[j].values()});
    for (std::size_t t = 0; t < xs.size(); ++t)
      ts.push_back({"x" + std::to_string(t + 1), c.xs[t].values(), bwd.grad_inputs[t].values()});
    return ts;
  };
  auto loss_of = [&](const auto& c) {
    return detail::probe(layer_forward(c.lp, c.xs, init ? &c.init : nullptr).outputs, c.probe);
  };
  return detail::check_precisions(make, tensors_of, loss_of, opt);
}

inline std::string render_table(const GradReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(32) << "tensor" << std::right << std::setw(8) << "size" << std::setw(9)
     << "checked" << std::setw(13) << "max_rel" << std::setw(13) << "mean_rel" << std::setw(8) << "worst"
     << std::setw(13) << "analytic" << std::setw(13) << "numeric" << "\n";
  os << std::scientific << std::setprecision(3);
  for (const auto& t : r.tensors)
    os << std::left << std::setw(32) << t.name << std::right << std::setw(8) << t.size << std::setw(9)
       << t.checked << std::setw(13) << t.max_rel << std::setw(13) << t.mean_rel << std::setw(8)
       << t.worst_index << std::setw(13) << t.worst_analytic << std::setw(13) << t.worst_numeric << "\n";
  os << (r.pass ? "PASS" : "FAIL") << " max relative error " << r.max_rel() << " (threshold "
     << r.threshold << ")";
  if (!r.pass && r.worst()) os << " worst tensor " << r.worst()->name;
  os << "\n";
  return os.str();
}

inline nlohmann::json to_json(const GradReport& r) {
  nlohmann::json j;
  j["pass"] = r.pass;
  j["threshold"] = r.threshold;
  j["max_rel"] = r.max_rel();
  j["tensors"] = nlohmann::json::array();
  for (const auto& t : r.tensors)
    j["tensors"].push_back({{"name", t.name},
                            {"size", t.size},
                            {"checked", t.checked},
                            {"max_rel", t.max_rel},
                            {"mean_rel", t.mean_rel},
                            {"worst_index", t.worst_index},
                            {"worst_analytic", t.worst_analytic},
                            {"worst_numeric", t.worst_numeric}});
  return j;
}

}  // namespace mcrnn
