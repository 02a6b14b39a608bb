#pragma once

// LIF network forward dynamics and the three backward algorithms of the probe:
//   STBP  full backpropagation through layers and time
//   SDBP  forward dynamics intact, temporal gradient pathways cut
//   NoTD  temporal state removed in both passes

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stp/numerics.hpp"

namespace stp {

enum class Mode { TemporalOn, TemporalOff };
enum class Algorithm { STBP, SDBP, NoTD };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::STBP: return "STBP";
    case Algorithm::SDBP: return "SDBP";
    case Algorithm::NoTD: return "NoTD";
  }
  return "?";
}

inline Algorithm parse_algorithm(std::string_view s) {
  if (s == "stbp" || s == "STBP") return Algorithm::STBP;
  if (s == "sdbp" || s == "SDBP") return Algorithm::SDBP;
  if (s == "notd" || s == "NoTD" || s == "NOTD") return Algorithm::NoTD;
  throw ConfigError("unknown algorithm '" + std::string(s) + "' (stbp|sdbp|notd)");
}

inline Mode mode_for(Algorithm a) { return a == Algorithm::NoTD ? Mode::TemporalOff : Mode::TemporalOn; }

struct LifParams {
  double decay = 0.5;
  double threshold = 0.5;

  void validate() const {
    if (!(decay >= 0.0 && decay <= 1.0)) throw ConfigError("LIF decay must lie in [0, 1]");
    if (!(threshold > 0.0)) throw ConfigError("LIF threshold must be > 0");
  }
};

enum class SurrogateKind { Rectangle, Triangle, Sigmoid, MultiGaussian };

inline std::string_view to_string(SurrogateKind k) {
  switch (k) {
    case SurrogateKind::Rectangle: return "rectangle";
    case SurrogateKind::Triangle: return "triangle";
    case SurrogateKind::Sigmoid: return "sigmoid";
    case SurrogateKind::MultiGaussian: return "multigaussian";
  }
  return "?";
}

inline SurrogateKind parse_surrogate(std::string_view s) {
  if (s == "rectangle") return SurrogateKind::Rectangle;
  if (s == "triangle") return SurrogateKind::Triangle;
  if (s == "sigmoid") return SurrogateKind::Sigmoid;
  if (s == "multigaussian") return SurrogateKind::MultiGaussian;
  throw ConfigError("unknown surrogate '" + std::string(s) + "'");
}

struct SurrogateSpec {
  SurrogateKind kind = SurrogateKind::Triangle;
  double width = 1.0;   // rectangle a
  double gamma = 1.0;   // triangle half-width
  double slope = 4.0;   // sigmoid k
  double h = 0.15;      // multi-gaussian side-lobe weight
  double sigma = 0.5;   // multi-gaussian width

  static SurrogateSpec of(SurrogateKind k) {
    SurrogateSpec s;
    s.kind = k;
    return s;
  }
};

namespace detail {
inline double gauss(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace detail

// Pseudo-derivative of the spike function evaluated at x = u - V_th.
inline double surrogate(double x, const SurrogateSpec& spec) {
  switch (spec.kind) {
    case SurrogateKind::Rectangle:
      return std::abs(x) < spec.width / 2.0 ? 1.0 / spec.width : 0.0;
    case SurrogateKind::Triangle:
      return std::max(0.0, 1.0 - std::abs(x) / spec.gamma) / spec.gamma;
    case SurrogateKind::Sigmoid: {
      const double sg = detail::sigmoid(spec.slope * x);
      return spec.slope * sg * (1.0 - sg);
    }
    case SurrogateKind::MultiGaussian: {
      const double sd = spec.sigma, wide = 6.0 * spec.sigma;
      return (1.0 + spec.h) * detail::gauss(x, 0.0, sd) - spec.h * detail::gauss(x, sd, wide) -
             spec.h * detail::gauss(x, -sd, wide);
    }
  }
  return 0.0;
}

inline bool has_primitive(SurrogateKind k) {
  return k == SurrogateKind::Sigmoid || k == SurrogateKind::Triangle;
}

// Smooth stand-in for the Heaviside step whose derivative is `surrogate`.
inline double surrogate_primitive(double x, const SurrogateSpec& spec) {
  switch (spec.kind) {
    case SurrogateKind::Sigmoid:
      return detail::sigmoid(spec.slope * x);
    case SurrogateKind::Triangle: {
      const double g = spec.gamma;
      if (x <= -g) return 0.0;
      if (x >= g) return 1.0;
      if (x <= 0.0) return (x + g) * (x + g) / (2.0 * g * g);
      return 1.0 - (g - x) * (g - x) / (2.0 * g * g);
    }
    default:
      throw ConfigError("surrogate '" + std::string(to_string(spec.kind)) +
                        "' has no closed-form primitive");
  }
}

template <typename Real = double>
struct LayerWeights {
  Tensor<Real> W;                 // [out x in]
  std::optional<Tensor<Real>> V;  // [out x out], recurrent only

  std::size_t out() const { return W.dim(0); }
  std::size_t in() const { return W.dim(1); }
};

// Non-spiking leaky integrator: o[t] = decay * o[t-1] + W * s_L[t].
template <typename Real = double>
struct Readout {
  Tensor<Real> W;  // [classes x n_L]
  double decay = 1.0;
};

template <typename Real = double>
struct Network {
  std::vector<LayerWeights<Real>> layers;
  Readout<Real> readout;
  LifParams lif;
  SurrogateSpec surrogate;
  bool detach_reset = false;

  std::size_t inputs() const { return layers.front().in(); }
  std::size_t classes() const { return readout.W.dim(0); }
  bool recurrent() const { return !layers.empty() && layers.front().V.has_value(); }

  void validate() const {
    lif.validate();
    if (layers.empty()) throw ShapeError("network needs at least one hidden layer");
    std::size_t prev = layers.front().in();
    for (const auto& l : layers) {
      if (l.W.rank() != 2 || l.in() != prev) throw ShapeError("layer input width mismatch");
      if (l.V && (l.V->rank() != 2 || l.V->dim(0) != l.out() || l.V->dim(1) != l.out()))
        throw ShapeError("recurrent matrix must be square and match layer width");
      if (l.V.has_value() != recurrent()) throw ShapeError("recurrence must be all-or-none");
      prev = l.out();
    }
    if (readout.W.rank() != 2 || readout.W.dim(1) != prev)
      throw ShapeError("readout width mismatch");
    if (!(readout.decay >= 0.0 && readout.decay <= 1.0))
      throw ConfigError("readout decay must lie in [0, 1]");
  }
};

// Per layer, per step record of the forward pass.
template <typename Real = double>
struct ForwardTrace {
  Mode mode = Mode::TemporalOn;
  bool smooth = false;
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<Tensor<Real>> input;                // [t] -> [batch x C]
  std::vector<std::vector<Tensor<Real>>> u;       // [l][t] -> [batch x n_l]
  std::vector<std::vector<Tensor<Real>>> s;       // [l][t] -> [batch x n_l]
  std::vector<Tensor<Real>> o;                    // [t] -> [batch x classes]

  // Spikes feeding layer l at step t (layer 0 reads the raw input).
  const Tensor<Real>& presyn(std::size_t l, std::size_t t) const {
    return l == 0 ? input[t] : s[l - 1][t];
  }
};

template <typename Real = double>
struct GradientSet {
  std::vector<Tensor<Real>> dW;
  std::vector<std::optional<Tensor<Real>>> dV;
  Tensor<Real> dWout;

  // Flat view in a fixed order: W0, V0, W1, V1, ..., Wout.
  std::vector<const Tensor<Real>*> tensors() const {
    std::vector<const Tensor<Real>*> out;
    for (std::size_t l = 0; l < dW.size(); ++l) {
      out.push_back(&dW[l]);
      if (dV[l]) out.push_back(&*dV[l]);
    }
    out.push_back(&dWout);
    return out;
  }
};

namespace detail {

template <typename Real, typename SpikeFn>
ForwardTrace<Real> forward(const Tensor<Real>& inputs, const Network<Real>& net, Mode mode,
                           bool smooth, SpikeFn&& spike) {
  net.validate();
  if (inputs.rank() != 3) throw ShapeError("inputs must be [batch x T x C]");
  if (inputs.dim(2) != net.inputs())
    throw ShapeError("input channels " + std::to_string(inputs.dim(2)) + " != network inputs " +
                     std::to_string(net.inputs()));
  const std::size_t B = inputs.dim(0), T = inputs.dim(1), C = inputs.dim(2);
  const std::size_t L = net.layers.size(), K = net.classes();
  const bool temporal = mode == Mode::TemporalOn;
  const Real lambda = static_cast<Real>(net.lif.decay);
  const Real vth = static_cast<Real>(net.lif.threshold);
  const Real out_decay = temporal ? static_cast<Real>(net.readout.decay) : Real(0);

  std::vector<Tensor<Real>> wt, vt;
  for (const auto& l : net.layers) {
    wt.push_back(transpose(l.W));
    if (l.V) vt.push_back(transpose(*l.V));
  }
  const Tensor<Real> wout_t = transpose(net.readout.W);

  ForwardTrace<Real> tr;
  tr.mode = mode;
  tr.smooth = smooth;
  tr.batch = B;
  tr.steps = T;
  tr.input.reserve(T);
  tr.u.assign(L, {});
  tr.s.assign(L, {});
  tr.o.reserve(T);

  for (std::size_t t = 0; t < T; ++t) {
    Tensor<Real> x({B, C});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) x(b, c) = inputs(b, t, c);
    tr.input.push_back(std::move(x));

    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t n = net.layers[l].out(), m = net.layers[l].in();
      Tensor<Real> u({B, n});
      kernel::gemm_acc(B, m, n, tr.presyn(l, t).data(), wt[l].data(), u.data());
      if (temporal && t > 0) {
        const Tensor<Real>& up = tr.u[l][t - 1];
        const Tensor<Real>& sp = tr.s[l][t - 1];
        if (!vt.empty()) kernel::gemm_acc(B, n, n, sp.data(), vt[l].data(), u.data());
        for (std::size_t i = 0; i < u.size(); ++i) u[i] += lambda * up[i] * (Real(1) - sp[i]);
      }
      Tensor<Real> s({B, n});
      for (std::size_t i = 0; i < u.size(); ++i) s[i] = spike(u[i] - vth);
      tr.u[l].push_back(std::move(u));
      tr.s[l].push_back(std::move(s));
    }

    Tensor<Real> o({B, K});
    kernel::gemm_acc(B, net.layers.back().out(), K, tr.s[L - 1][t].data(), wout_t.data(), o.data());
    if (t > 0 && out_decay != Real(0)) {
      const Tensor<Real>& op = tr.o[t - 1];
      for (std::size_t i = 0; i < o.size(); ++i) o[i] += out_decay * op[i];
    }
    o.require_finite("readout potential");
    tr.o.push_back(std::move(o));
  }
  for (std::size_t l = 0; l < L; ++l)
    for (const auto& u : tr.u[l]) u.require_finite("membrane potential");
  return tr;
}

}  // namespace detail

// Heaviside spiking forward pass. TemporalOff drops both the membrane carry and
// the readout leak so every step is processed on its own.
template <typename Real>
ForwardTrace<Real> lif_forward(const Tensor<Real>& inputs, const Network<Real>& net, Mode mode) {
  return detail::forward(inputs, net, mode, false,
                         [](Real x) { return x >= Real(0) ? Real(1) : Real(0); });
}

// Same dynamics with the step replaced by the surrogate's primitive, so the
// whole unrolled network is exactly differentiable. Test harness only.
template <typename Real>
ForwardTrace<Real> smooth_forward(const Tensor<Real>& inputs, const Network<Real>& net, Mode mode) {
  if (!has_primitive(net.surrogate.kind))
    throw ConfigError("smooth_forward needs a sigmoid or triangle surrogate");
  const SurrogateSpec spec = net.surrogate;
  return detail::forward(inputs, net, mode, true, [spec](Real x) {
    return static_cast<Real>(surrogate_primitive(static_cast<double>(x), spec));
  });
}

// Direct loss partials dL/do[t]; an empty tensor at step t means zero.
template <typename Real = double>
using ReadoutGrads = std::vector<Tensor<Real>>;

template <typename Real>
ReadoutGrads<Real> final_step_grads(std::size_t steps, Tensor<Real> grad) {
  ReadoutGrads<Real> g(steps);
  g.back() = std::move(grad);
  return g;
}

namespace detail {

template <typename Real>
GradientSet<Real> backward(const Network<Real>& net, const ForwardTrace<Real>& tr,
                           const ReadoutGrads<Real>& grads, bool temporal_credit) {
  const std::size_t B = tr.batch, T = tr.steps, L = net.layers.size(), K = net.classes();
  if (grads.size() != T) throw ShapeError("readout gradients must have one entry per step");
  for (const auto& g : grads)
    if (!g.empty() && g.shape() != Shape{B, K}) throw ShapeError("readout gradient shape");

  const Real lambda = static_cast<Real>(net.lif.decay);
  const Real vth = static_cast<Real>(net.lif.threshold);
  const Real out_decay = static_cast<Real>(net.readout.decay);
  const bool recurrent = net.recurrent() && tr.mode == Mode::TemporalOn;
  const std::size_t nl = net.layers.back().out();

  GradientSet<Real> gs;
  gs.dW.resize(L);
  gs.dV.resize(L);

  // Readout layer.
  std::vector<Tensor<Real>> upper(T);
  Tensor<Real> dwout_t({nl, K});
  {
    Tensor<Real> next({B, K});
    for (std::size_t t = T; t-- > 0;) {
      Tensor<Real> d({B, K});
      if (!grads[t].empty()) d = grads[t];
      if (temporal_credit && t + 1 < T)
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += out_decay * next[i];
      kernel::gemm_tn_acc(B, nl, K, tr.s[L - 1][t].data(), d.data(), dwout_t.data());
      next = d;
      upper[t] = std::move(d);
    }
  }
  gs.dWout = transpose(dwout_t);
  const Tensor<Real>* upper_w = &net.readout.W;

  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = net.layers[l];
    const std::size_t n = layer.out(), m = layer.in(), nu = upper_w->dim(0);
    Tensor<Real> dw_t({m, n});
    std::optional<Tensor<Real>> dv_t;
    if (layer.V) dv_t = Tensor<Real>({n, n});

    std::vector<Tensor<Real>> delta(T);
    Tensor<Real> next({B, n});
    for (std::size_t t = T; t-- > 0;) {
      const Tensor<Real>& u = tr.u[l][t];
      const Tensor<Real>& s = tr.s[l][t];
      // dL/ds through the layer above at the same step.
      Tensor<Real> g({B, n});
      kernel::gemm_acc(B, nu, n, upper[t].data(), upper_w->data(), g.data());
      const bool carry = temporal_credit && t + 1 < T;
      if (carry) {
        if (recurrent) kernel::gemm_acc(B, n, n, next.data(), layer.V->data(), g.data());
        if (!net.detach_reset)
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= next[i] * lambda * u[i];
      }
      Tensor<Real> d({B, n});
      for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = g[i] * static_cast<Real>(surrogate(static_cast<double>(u[i] - vth), net.surrogate));
      if (carry)
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += next[i] * lambda * (Real(1) - s[i]);

      kernel::gemm_tn_acc(B, m, n, tr.presyn(l, t).data(), d.data(), dw_t.data());
      if (dv_t && recurrent && t > 0)
        kernel::gemm_tn_acc(B, n, n, tr.s[l][t - 1].data(), d.data(), dv_t->data());
      next = d;
      delta[t] = std::move(d);
    }
    gs.dW[l] = transpose(dw_t);
    if (dv_t) gs.dV[l] = transpose(*dv_t);
    upper = std::move(delta);
    upper_w = &layer.W;
  }
  for (const auto* t : gs.tensors()) t->require_finite("gradient");
  return gs;
}

}  // namespace detail

// Full spatio-temporal backpropagation, including the decay-and-reset pathway
// du[t+1]/du[t] = lambda*(1-s[t]) - lambda*u[t]*H(u[t]-V_th), the recurrent
// pathway and the readout leak.
template <typename Real>
GradientSet<Real> backward_stbp(const Network<Real>& net, const ForwardTrace<Real>& trace,
                                const ReadoutGrads<Real>& grads) {
  if (trace.mode != Mode::TemporalOn) throw Error("backward_stbp needs a TemporalOn trace");
  return detail::backward(net, trace, grads, true);
}

// Spatial-only credit: errors never cross from step t to an earlier step.
template <typename Real>
GradientSet<Real> backward_sdbp(const Network<Real>& net, const ForwardTrace<Real>& trace,
                                const ReadoutGrads<Real>& grads) {
  if (trace.mode != Mode::TemporalOn) throw Error("backward_sdbp needs a TemporalOn trace");
  return detail::backward(net, trace, grads, false);
}

// Per-step spatial backprop on a TemporalOff trace; contributions summed over steps.
template <typename Real>
GradientSet<Real> backward_notd(const Network<Real>& net, const ForwardTrace<Real>& trace,
                                const ReadoutGrads<Real>& grads) {
  if (trace.mode != Mode::TemporalOff) throw Error("backward_notd needs a TemporalOff trace");
  auto gs = detail::backward(net, trace, grads, false);
  // The recurrent matrix takes no part in a TemporalOff pass.
  for (std::size_t l = 0; l < gs.dV.size(); ++l)
    if (net.layers[l].V) gs.dV[l] = Tensor<Real>(net.layers[l].V->shape());
  return gs;
}

template <typename Real>
GradientSet<Real> backward(Algorithm a, const Network<Real>& net, const ForwardTrace<Real>& trace,
                           const ReadoutGrads<Real>& grads) {
  switch (a) {
    case Algorithm::STBP: return backward_stbp(net, trace, grads);
    case Algorithm::SDBP: return backward_sdbp(net, trace, grads);
    case Algorithm::NoTD: return backward_notd(net, trace, grads);
  }
  throw Error("unknown algorithm");
}

template <typename Real>
struct LossAndGrad {
  double loss = 0.0;
  Tensor<Real> grad;
};

// Mean softmax cross-entropy over the batch; grad = (softmax - onehot) / batch.
template <typename Real>
LossAndGrad<Real> softmax_xent(const Tensor<Real>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("softmax_xent: logits/labels mismatch");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  LossAndGrad<Real> out{0.0, Tensor<Real>({B, K})};
  std::vector<double> p(K);
  for (std::size_t b = 0; b < B; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= K)
      throw Error("label " + std::to_string(y) + " out of range [0, " + std::to_string(K) + ")");
    double mx = static_cast<double>(logits(b, 0));
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(logits(b, k)));
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += (p[k] = std::exp(static_cast<double>(logits(b, k)) - mx));
    out.loss += std::log(z) + mx - static_cast<double>(logits(b, y));
    for (std::size_t k = 0; k < K; ++k) {
      const double target = static_cast<std::size_t>(y) == k ? 1.0 : 0.0;
      out.grad(b, k) = static_cast<Real>((p[k] / z - target) / static_cast<double>(B));
    }
  }
  out.loss /= static_cast<double>(B);
  return out;
}

}  // namespace stp
