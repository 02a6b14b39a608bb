#pragma once

// Optimizers, schedules, the epoch loop, evaluation and checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stp/binio.hpp"
#include "stp/hash.hpp"
#include "stp/snn.hpp"
#include "stp/tasks.hpp"

namespace stp {

enum class OptimizerKind { SGD, AdamW };
enum class ScheduleKind { Constant, Step, Cosine };
// How NoTD turns per-step readouts into one prediction.
enum class Aggregation { Mean, Confident, Last };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "sgd" : "adamw"; }
inline std::string_view to_string(ScheduleKind k) {
  return k == ScheduleKind::Constant ? "constant" : k == ScheduleKind::Step ? "step" : "cosine";
}
inline std::string_view to_string(Aggregation a) {
  return a == Aggregation::Mean ? "mean" : a == Aggregation::Confident ? "confident" : "last";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::SGD;
  if (s == "adamw") return OptimizerKind::AdamW;
  throw ConfigError("unknown optimizer '" + std::string(s) + "' (sgd|adamw)");
}
inline ScheduleKind parse_schedule(std::string_view s) {
  if (s == "constant") return ScheduleKind::Constant;
  if (s == "step") return ScheduleKind::Step;
  if (s == "cosine") return ScheduleKind::Cosine;
  throw ConfigError("unknown schedule '" + std::string(s) + "' (constant|step|cosine)");
}
inline Aggregation parse_aggregation(std::string_view s) {
  if (s == "mean") return Aggregation::Mean;
  if (s == "confident") return Aggregation::Confident;
  if (s == "last") return Aggregation::Last;
  throw ConfigError("unknown aggregation '" + std::string(s) + "' (mean|confident|last)");
}

struct AdamWParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct TrainConfig {
  std::uint32_t epochs = 50;
  std::uint32_t batch_size = 250;
  double lr = 5e-4;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  AdamWParams adamw;
  double momentum = 0.0;
  ScheduleKind schedule = ScheduleKind::Step;
  double step_factor = 0.8;
  std::uint32_t step_period = 10;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> hidden = {128, 128};
  bool recurrent = true;
  bool recurrent_zero_init = true;
  LifParams lif{0.98, 0.5};
  SurrogateSpec surrogate;
  Algorithm algorithm = Algorithm::STBP;
  // Global-norm clip; negative means "1.0 when recurrent, off otherwise", 0 disables.
  double clip_norm = -1.0;
  // Negative means 1.0 for STBP/SDBP and 0 for NoTD.
  double readout_decay = -1.0;
  Aggregation aggregation = Aggregation::Mean;
  bool detach_reset = false;

  double effective_clip() const { return clip_norm < 0.0 ? (recurrent ? 1.0 : 0.0) : clip_norm; }
  double effective_readout_decay() const {
    if (readout_decay >= 0.0) return readout_decay;
    return algorithm == Algorithm::NoTD ? 0.0 : 1.0;
  }

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch size must be > 0");
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (hidden.empty()) throw ConfigError("at least one hidden layer is required");
    for (auto h : hidden)
      if (h == 0) throw ConfigError("hidden widths must be > 0");
    if (step_period == 0) throw ConfigError("step period must be > 0");
    if (!(step_factor > 0.0)) throw ConfigError("step factor must be > 0");
    if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0 && adamw.beta2 >= 0.0 && adamw.beta2 < 1.0))
      throw ConfigError("AdamW betas must lie in [0, 1)");
    if (!(adamw.eps > 0.0) || adamw.weight_decay < 0.0) throw ConfigError("bad AdamW eps/decay");
    lif.validate();
    if (readout_decay > 1.0) throw ConfigError("readout decay must be <= 1");
  }

  // Stable text used for hashing; every field that changes training appears here.
  std::string canonical() const {
    std::ostringstream oss;
    oss.precision(17);
    oss << "epochs=" << epochs << ";batch=" << batch_size << ";lr=" << lr
        << ";optimizer=" << to_string(optimizer) << ";beta1=" << adamw.beta1 << ";beta2=" << adamw.beta2
        << ";eps=" << adamw.eps << ";wd=" << adamw.weight_decay << ";momentum=" << momentum
        << ";schedule=" << to_string(schedule) << ";step_factor=" << step_factor
        << ";step_period=" << step_period << ";seed=" << seed << ";hidden=";
    for (std::size_t i = 0; i < hidden.size(); ++i) oss << (i ? "-" : "") << hidden[i];
    oss << ";recurrent=" << recurrent << ";rec_zero=" << recurrent_zero_init << ";decay=" << lif.decay
        << ";threshold=" << lif.threshold << ";surrogate=" << to_string(surrogate.kind)
        << ";sg=" << surrogate.width << "," << surrogate.gamma << "," << surrogate.slope << ","
        << surrogate.h << "," << surrogate.sigma << ";algorithm=" << to_string(algorithm)
        << ";clip=" << clip_norm << ";readout_decay=" << readout_decay
        << ";aggregation=" << to_string(aggregation) << ";detach_reset=" << detach_reset;
    return oss.str();
  }

  Digest hash() const { return sha256(canonical()); }
};

inline double step_lr(double base_lr, std::uint32_t epoch, double factor, std::uint32_t period) {
  return base_lr * std::pow(factor, static_cast<double>(epoch / period));
}

inline double cosine_lr(double base_lr, std::uint32_t epoch, std::uint32_t epochs) {
  if (epochs == 0) return base_lr;
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(epochs)));
}

inline double lr_at(const TrainConfig& c, std::uint32_t epoch) {
  switch (c.schedule) {
    case ScheduleKind::Constant: return c.lr;
    case ScheduleKind::Step: return step_lr(c.lr, epoch, c.step_factor, c.step_period);
    case ScheduleKind::Cosine: return cosine_lr(c.lr, epoch, c.epochs);
  }
  return c.lr;
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for W and the readout; V is zero
// unless the config asks for uniform recurrent init. Stream 1 of the seed.
template <typename Real>
Network<Real> init_network(const TrainConfig& cfg, std::size_t inputs, std::size_t classes) {
  Rng64 rng = substream(cfg.seed, 1);
  auto uniform = [&](std::size_t rows, std::size_t cols) {
    Tensor<Real> w({rows, cols});
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    for (auto& v : w.values()) v = static_cast<Real>(rng.uniform(-bound, bound));
    return w;
  };
  Network<Real> net;
  std::size_t prev = inputs;
  for (auto h : cfg.hidden) {
    LayerWeights<Real> l{uniform(h, prev), std::nullopt};
    if (cfg.recurrent) l.V = cfg.recurrent_zero_init ? Tensor<Real>({h, h}) : uniform(h, h);
    net.layers.push_back(std::move(l));
    prev = h;
  }
  net.readout.W = uniform(classes, prev);
  net.readout.decay = cfg.effective_readout_decay();
  net.lif = cfg.lif;
  net.surrogate = cfg.surrogate;
  net.detach_reset = cfg.detach_reset;
  net.validate();
  return net;
}

// Mutable views over the trainable tensors, in GradientSet::tensors() order.
template <typename Real>
std::vector<Tensor<Real>*> parameters(Network<Real>& net) {
  std::vector<Tensor<Real>*> p;
  for (auto& l : net.layers) {
    p.push_back(&l.W);
    if (l.V) p.push_back(&*l.V);
  }
  p.push_back(&net.readout.W);
  return p;
}

template <typename Real>
std::vector<const Tensor<Real>*> parameters(const Network<Real>& net) {
  std::vector<const Tensor<Real>*> p;
  for (const auto& l : net.layers) {
    p.push_back(&l.W);
    if (l.V) p.push_back(&*l.V);
  }
  p.push_back(&net.readout.W);
  return p;
}

template <typename Real>
std::vector<std::string> parameter_names(const Network<Real>& net) {
  std::vector<std::string> n;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    n.push_back("W" + std::to_string(i));
    if (net.layers[i].V) n.push_back("V" + std::to_string(i));
  }
  n.push_back("Wout");
  return n;
}

template <typename Real = double>
struct OptimState {
  std::vector<Tensor<Real>> m;  // first moment, or SGD momentum buffer
  std::vector<Tensor<Real>> v;  // second moment (AdamW only)
  std::uint64_t step = 0;

  static OptimState zeros_like(const std::vector<Tensor<Real>*>& params) {
    OptimState s;
    for (const auto* p : params) {
      s.m.emplace_back(p->shape());
      s.v.emplace_back(p->shape());
    }
    return s;
  }
};

namespace detail {
template <typename Real>
void check_step_shapes(const std::vector<Tensor<Real>*>& w, const std::vector<const Tensor<Real>*>& g,
                       const OptimState<Real>& s) {
  if (w.size() != g.size() || w.size() != s.m.size()) throw ShapeError("optimizer: tensor count mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i]->shape() != g[i]->shape() || w[i]->shape() != s.m[i].shape())
      throw ShapeError("optimizer: shape mismatch");
    if (!g[i]->all_finite()) throw NumericError("optimizer: non-finite gradient");
  }
}
}  // namespace detail

// Decoupled weight decay followed by the bias-corrected Adam update.
template <typename Real>
void adamw_step(const std::vector<Tensor<Real>*>& weights, const std::vector<const Tensor<Real>*>& grads,
                OptimState<Real>& state, double lr, const AdamWParams& hp = {}) {
  detail::check_step_shapes(weights, grads, state);
  ++state.step;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Tensor<Real>& w = *weights[i];
    const Tensor<Real>& g = *grads[i];
    Tensor<Real>& m = state.m[i];
    Tensor<Real>& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      double wj = static_cast<double>(w[j]);
      const double gj = static_cast<double>(g[j]);
      wj -= lr * hp.weight_decay * wj;
      const double mj = hp.beta1 * static_cast<double>(m[j]) + (1.0 - hp.beta1) * gj;
      const double vj = hp.beta2 * static_cast<double>(v[j]) + (1.0 - hp.beta2) * gj * gj;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      wj -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + hp.eps);
      w[j] = static_cast<Real>(wj);
    }
  }
}

template <typename Real>
void sgd_step(const std::vector<Tensor<Real>*>& weights, const std::vector<const Tensor<Real>*>& grads,
              OptimState<Real>& state, double lr, double momentum) {
  detail::check_step_shapes(weights, grads, state);
  ++state.step;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    Tensor<Real>& w = *weights[i];
    const Tensor<Real>& g = *grads[i];
    Tensor<Real>& buf = state.m[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const Real d = momentum > 0.0 ? (buf[j] = static_cast<Real>(momentum) * buf[j] + g[j]) : g[j];
      w[j] -= static_cast<Real>(lr) * d;
    }
  }
}

// Rescales all gradients so their joint L2 norm is at most `max_norm`.
template <typename Real>
double clip_global_norm(GradientSet<Real>& gs, double max_norm) {
  double sq = 0.0;
  for (const auto* t : gs.tensors())
    for (Real v : t->values()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const Real scale = static_cast<Real>(max_norm / norm);
    auto apply = [&](Tensor<Real>& t) {
      for (auto& v : t.values()) v *= scale;
    };
    for (auto& t : gs.dW) apply(t);
    for (auto& t : gs.dV)
      if (t) apply(*t);
    apply(gs.dWout);
  }
  return norm;
}

template <typename Real>
std::size_t argmax_row(const Tensor<Real>& t, std::size_t row) {
  auto r = t.row(row);
  return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

// Predicted class per sample. STBP/SDBP read the final-step readout; NoTD
// aggregates per-step readouts.
template <typename Real>
std::vector<int> predict(const ForwardTrace<Real>& tr, Algorithm algo, Aggregation agg) {
  const std::size_t B = tr.batch, T = tr.steps, K = tr.o.front().dim(1);
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (algo != Algorithm::NoTD || agg == Aggregation::Last) {
      out[b] = static_cast<int>(argmax_row(tr.o[T - 1], b));
    } else if (agg == Aggregation::Mean) {
      std::vector<double> acc(K, 0.0);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < K; ++k) acc[k] += static_cast<double>(tr.o[t](b, k));
      out[b] = static_cast<int>(std::max_element(acc.begin(), acc.end()) - acc.begin());
    } else {
      std::size_t best_t = 0;
      double best = -INFINITY;
      for (std::size_t t = 0; t < T; ++t) {
        const double v = static_cast<double>(tr.o[t](b, argmax_row(tr.o[t], b)));
        if (v > best) best = v, best_t = t;
      }
      out[b] = static_cast<int>(argmax_row(tr.o[best_t], b));
    }
  }
  return out;
}

// Fraction of correctly classified samples, evaluated in batches in index order.
template <typename Real>
double evaluate(const Network<Real>& net, const SequenceDataset<Real>& ds, Algorithm algo,
                Aggregation agg = Aggregation::Mean, std::size_t batch = 500) {
  if (ds.samples() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::uint32_t> idx;
  for (std::size_t start = 0; start < ds.samples(); start += batch) {
    const std::size_t end = std::min(ds.samples(), start + batch);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = static_cast<std::uint32_t>(i);
    const auto tr = lif_forward(ds.gather(idx), net, mode_for(algo));
    const auto pred = predict(tr, algo, agg);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ds.labels[start + i];
  }
  return static_cast<double>(correct) / static_cast<double>(ds.samples());
}

// Loss and its readout partials for one batch under the algorithm's placement:
// final step for STBP/SDBP, every step (averaged) for NoTD.
template <typename Real>
std::pair<double, ReadoutGrads<Real>> batch_loss(const ForwardTrace<Real>& tr, std::span<const int> labels,
                                                 Algorithm algo) {
  const std::size_t T = tr.steps;
  if (algo != Algorithm::NoTD) {
    auto lg = softmax_xent(tr.o[T - 1], labels);
    return {lg.loss, final_step_grads(T, std::move(lg.grad))};
  }
  ReadoutGrads<Real> grads(T);
  double loss = 0.0;
  const Real inv_t = Real(1) / static_cast<Real>(T);
  for (std::size_t t = 0; t < T; ++t) {
    auto lg = softmax_xent(tr.o[t], labels);
    loss += lg.loss;
    for (auto& v : lg.grad.values()) v *= inv_t;
    grads[t] = std::move(lg.grad);
  }
  return {loss / static_cast<double>(T), std::move(grads)};
}

// STPB: "STPB", version u32, config hash (32 raw bytes), array count u32, then
// per array: name len u32, UTF-8 name, ndim u8, dims u32[], f64 payload.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  Digest config_hash{};
  std::map<std::string, Tensor<double>> arrays;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;

  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    binio::put_bytes(os, "STPB");
    binio::put_le<std::uint32_t>(os, kVersion);
    os.write(reinterpret_cast<const char*>(config_hash.data()), 32);
    binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& [name, t] : arrays) {
      binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
      binio::put_bytes(os, name);
      binio::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
      for (auto d : t.shape()) binio::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
      for (double v : t.values()) binio::put_f64(os, v);
    }
    if (!os) throw DataError("write failed for " + path.string());
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    if (binio::get_bytes(is, 4, "magic") != "STPB") throw DataError("not an STPB file: " + path.string());
    if (binio::get_le<std::uint32_t>(is, "version") != kVersion) throw DataError("unsupported STPB version");
    Checkpoint c;
    binio::read_exact(is, reinterpret_cast<char*>(c.config_hash.data()), 32, "config hash");
    const auto count = binio::get_le<std::uint32_t>(is, "array count");
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = binio::get_le<std::uint32_t>(is, "name length");
      std::string name = binio::get_bytes(is, len, "array name");
      const auto ndim = binio::get_le<std::uint8_t>(is, "ndim");
      Shape shape(ndim);
      for (auto& d : shape) d = binio::get_le<std::uint32_t>(is, "dims");
      Tensor<double> t(shape);
      for (auto& v : t.values()) v = binio::get_f64(is, "payload");
      c.arrays.emplace(std::move(name), std::move(t));
    }
    return c;
  }

  const Tensor<double>& at(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw DataError("checkpoint has no array '" + name + "'");
    return it->second;
  }
};

template <typename Real = double>
struct TrainState {
  Network<Real> net;
  OptimState<Real> opt;
  std::uint32_t epoch = 0;  // number of completed epochs
  Rng64 rng{0};

  Checkpoint to_checkpoint(const TrainConfig& cfg) const {
    Checkpoint c;
    c.config_hash = cfg.hash();
    const auto params = parameters(net);
    const auto names = parameter_names(net);
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.arrays.emplace(names[i], params[i]->template cast<double>());
      if (i < opt.m.size()) {
        c.arrays.emplace("opt.m." + names[i], opt.m[i].template cast<double>());
        c.arrays.emplace("opt.v." + names[i], opt.v[i].template cast<double>());
      }
    }
    c.arrays.emplace("opt.step", Tensor<double>({1}, {static_cast<double>(opt.step)}));
    c.arrays.emplace("epoch", Tensor<double>({1}, {static_cast<double>(epoch)}));
    const std::uint64_t st = rng.state();
    c.arrays.emplace("rng", Tensor<double>({2}, {static_cast<double>(st >> 32), static_cast<double>(st & 0xFFFFFFFFu)}));
    return c;
  }

  static TrainState from_checkpoint(const Checkpoint& c, const TrainConfig& cfg, std::size_t inputs,
                                    std::size_t classes) {
    if (c.config_hash != cfg.hash()) throw ConfigError("checkpoint was written under a different config");
    TrainState s;
    s.net = init_network<Real>(cfg, inputs, classes);
    auto params = parameters(s.net);
    const auto names = parameter_names(s.net);
    s.opt = OptimState<Real>::zeros_like(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto load_into = [&](Tensor<Real>& dst, const std::string& key) {
        const auto& src = c.at(key);
        if (src.shape() != dst.shape()) throw DataError("checkpoint array '" + key + "' has wrong shape");
        dst = src.template cast<Real>();
      };
      load_into(*params[i], names[i]);
      load_into(s.opt.m[i], "opt.m." + names[i]);
      load_into(s.opt.v[i], "opt.v." + names[i]);
    }
    s.opt.step = static_cast<std::uint64_t>(c.at("opt.step")[0]);
    s.epoch = static_cast<std::uint32_t>(c.at("epoch")[0]);
    const auto& r = c.at("rng");
    s.rng.set_state((static_cast<std::uint64_t>(r[0]) << 32) | static_cast<std::uint64_t>(r[1]));
    return s;
  }
};

struct EpochMetrics {
  std::uint32_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

template <typename Real = double>
struct TrainResult {
  std::vector<EpochMetrics> history;
  TrainState<Real> final_state;
  Checkpoint best;
  double best_test_accuracy = 0.0;
  double final_test_accuracy = 0.0;
};

// Per-epoch shuffle: pure function of (seed, epoch).
inline std::vector<std::uint32_t> epoch_order(std::uint64_t seed, std::uint32_t epoch, std::uint32_t n) {
  Rng64 r = substream(seed, 1000 + epoch);
  return fisher_yates(r, n);
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

template <typename Real>
TrainState<Real> fresh_state(const TrainConfig& cfg, std::size_t inputs, std::size_t classes) {
  TrainState<Real> s;
  s.net = init_network<Real>(cfg, inputs, classes);
  s.opt = OptimState<Real>::zeros_like(parameters(s.net));
  s.rng = substream(cfg.seed, 1000);
  return s;
}

// Runs epochs [state.epoch, cfg.epochs). A non-finite loss aborts with DivergenceError.
template <typename Real>
TrainResult<Real> train_run(const TrainConfig& cfg, const SequenceDataset<Real>& train,
                            const SequenceDataset<Real>& test, std::optional<TrainState<Real>> resume = {},
                            const EpochCallback& on_epoch = {}) {
  cfg.validate();
  train.validate();
  test.validate();
  if (train.channels() != test.channels() || train.n_classes != test.n_classes)
    throw ConfigError("train/test datasets are incompatible");
  if (train.samples() == 0) throw DataError("empty training set");

  TrainResult<Real> res;
  TrainState<Real> st = resume ? std::move(*resume) : fresh_state<Real>(cfg, train.channels(), train.n_classes);
  if (st.net.inputs() != train.channels() || st.net.classes() != train.n_classes)
    throw ConfigError("network shape does not fit the dataset");

  const Algorithm algo = cfg.algorithm;
  const double clip = cfg.effective_clip();
  res.best = st.to_checkpoint(cfg);
  res.best_test_accuracy = -1.0;

  const auto n = static_cast<std::uint32_t>(train.samples());
  while (st.epoch < cfg.epochs) {
    const std::uint32_t epoch = st.epoch;
    const double lr = lr_at(cfg, epoch);
    const auto order = epoch_order(cfg.seed, epoch, n);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batches = 0;
    std::vector<int> labels;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min<std::size_t>(n, start + cfg.batch_size);
      std::span<const std::uint32_t> idx(order.data() + start, end - start);
      labels.resize(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];

      const auto tr = lif_forward(train.gather(idx), st.net, mode_for(algo));
      auto [loss, grads] = batch_loss(tr, labels, algo);
      if (!std::isfinite(loss))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches));
      const auto pred = predict(tr, algo, cfg.aggregation);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];

      auto gs = backward(algo, st.net, tr, grads);
      clip_global_norm(gs, clip);
      const auto g = gs.tensors();
      if (cfg.optimizer == OptimizerKind::AdamW)
        adamw_step(parameters(st.net), g, st.opt, lr, cfg.adamw);
      else
        sgd_step(parameters(st.net), g, st.opt, lr, cfg.momentum);
      loss_sum += loss;
      ++batches;
    }
    st.epoch = epoch + 1;
    st.rng = substream(cfg.seed, 1000 + st.epoch);

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(batches);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    m.test_accuracy = evaluate(st.net, test, algo, cfg.aggregation);
    res.history.push_back(m);
    if (on_epoch) on_epoch(m);
    if (m.test_accuracy > res.best_test_accuracy) {
      res.best_test_accuracy = m.test_accuracy;
      res.best = st.to_checkpoint(cfg);
    }
  }
  res.final_test_accuracy = evaluate(st.net, test, algo, cfg.aggregation);
  if (res.history.empty()) {
    res.best_test_accuracy = res.final_test_accuracy;
    res.best = st.to_checkpoint(cfg);
  }
  res.final_state = std::move(st);
  return res;
}

inline std::string format_real(double v) {
  std::ostringstream oss;
  oss.precision(10);
  oss << v;
  return oss.str();
}

// One CSV row per (epoch, split, metric).
inline std::string metrics_csv(const std::string& run_id, const std::string& task, Algorithm algo,
                               const std::vector<EpochMetrics>& history, bool header = true) {
  std::ostringstream os;
  if (header) os << "run_id,task,algorithm,epoch,split,metric,value\n";
  for (const auto& m : history) {
    const std::string prefix = run_id + "," + task + "," + std::string(to_string(algo)) + "," +
                               std::to_string(m.epoch) + ",";
    os << prefix << "train,lr," << format_real(m.lr) << "\n";
    os << prefix << "train,loss," << format_real(m.train_loss) << "\n";
    os << prefix << "train,accuracy," << format_real(m.train_accuracy) << "\n";
    os << prefix << "test,accuracy," << format_real(m.test_accuracy) << "\n";
  }
  return os.str();
}

}  // namespace stp
