#pragma once

// Theoretical per-layer energy of spiking and non-spiking architectures, counted
// as accumulate (AC) and multiply-accumulate (MAC) operations.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stp/snn.hpp"

namespace stp {

struct EnergyConstants {
  double e_ac = 0.9;   // pJ per AC
  double e_mac = 4.6;  // pJ per MAC

  void validate() const {
    if (!(e_ac > 0.0 && e_mac > 0.0)) throw ConfigError("energy constants must be > 0");
  }
};

struct ArchDims {
  std::uint64_t m = 1;     // input size
  std::uint64_t n = 1;     // hidden size
  std::uint64_t k = 1;     // kernel size
  std::uint64_t h = 1;     // feedforward hidden dim
  std::uint64_t T = 1;     // sequence length
  std::uint64_t T_in = 1;  // internal window
  std::uint64_t layers = 1;

  void validate() const {
    if (!m || !n || !k || !h || !T || !T_in || !layers) throw ConfigError("architecture dims must be positive");
  }
};

struct SpikeStats {
  std::optional<double> f_in, f_out, f_conv2, f_q, f_k, f_v, f_attn, f_fc1, f_fc2;
  // Measured firing rate at each layer boundary (input first).
  std::vector<double> per_boundary;
};

enum class Arch { TCN, SpikingTCN, LSTM, GSU, Transformer, SDT4, SDT1, SpikingFC, DenseFC };

inline std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::TCN: return "TCN";
    case Arch::SpikingTCN: return "SpikingTCN";
    case Arch::LSTM: return "LSTM";
    case Arch::GSU: return "GSU";
    case Arch::Transformer: return "Transformer";
    case Arch::SDT4: return "SDT4";
    case Arch::SDT1: return "SDT1";
    case Arch::SpikingFC: return "SpikingFC";
    case Arch::DenseFC: return "DenseFC";
  }
  return "?";
}

inline Arch parse_arch(std::string_view s) {
  for (auto a : {Arch::TCN, Arch::SpikingTCN, Arch::LSTM, Arch::GSU, Arch::Transformer, Arch::SDT4, Arch::SDT1,
                 Arch::SpikingFC, Arch::DenseFC})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

struct EnergyBreakdown {
  double ac_ops = 0.0;
  double mac_ops = 0.0;
  double ac_pj = 0.0;
  double mac_pj = 0.0;

  double total_pj() const { return ac_pj + mac_pj; }
  double total_nj() const { return total_pj() / 1000.0; }
};

namespace detail {
inline double need(const std::optional<double>& f, const char* name, Arch a) {
  if (!f) throw ConfigError(std::string(to_string(a)) + " needs spike frequency " + name);
  if (!(*f >= 0.0 && *f <= 1.0)) throw ConfigError(std::string("spike frequency ") + name + " outside [0, 1]");
  return *f;
}
}  // namespace detail

// Energy of one layer of `arch`.
inline EnergyBreakdown energy_of(Arch arch, const ArchDims& d, const SpikeStats& s, const EnergyConstants& c = {}) {
  d.validate();
  c.validate();
  const double m = static_cast<double>(d.m), n = static_cast<double>(d.n), k = static_cast<double>(d.k);
  const double h = static_cast<double>(d.h), T = static_cast<double>(d.T);
  double ac = 0.0, mac = 0.0;
  switch (arch) {
    case Arch::TCN:
      mac = k * m * n + k * n * n;
      break;
    case Arch::SpikingTCN:
      ac = k * m * n * detail::need(s.f_in, "f_in", arch) + k * n * n * detail::need(s.f_conv2, "f_conv2", arch);
      break;
    case Arch::LSTM:
      mac = 4 * m * n + 4 * n * n + 19 * n;
      break;
    case Arch::GSU:
      ac = 2 * m * n * detail::need(s.f_in, "f_in", arch) + 2 * n * n * detail::need(s.f_out, "f_out", arch);
      mac = 5 * n;
      break;
    case Arch::Transformer:
      mac = 4 * n * n + 2 * n * T + 2 * n * h;
      break;
    case Arch::SDT4:
    case Arch::SDT1: {
      const double fin = detail::need(s.f_in, "f_in", arch), fa = detail::need(s.f_attn, "f_attn", arch);
      const double fq = detail::need(s.f_q, "f_Q", arch), fk = detail::need(s.f_k, "f_K", arch);
      const double fv = detail::need(s.f_v, "f_V", arch);
      const double f1 = detail::need(s.f_fc1, "f_fc1", arch), f2 = detail::need(s.f_fc2, "f_fc2", arch);
      if (arch == Arch::SDT4) {
        ac = (12 * fin + 4 * fa) * n * n + (4 * fq * fk + 4 * fv) * n * T + (4 * f1 + 4 * f2) * n * h;
        mac = 24 * n + 4 * h;
      } else {
        ac = (3 * fin + fa) * n * n + (fq * fk + fv) * n * T + (f1 + f2) * n * h;
      }
      break;
    }
    case Arch::SpikingFC:
      ac = m * n * detail::need(s.f_in, "f_in", arch);
      break;
    case Arch::DenseFC:
      mac = m * n;
      break;
  }
  return {ac, mac, ac * c.e_ac, mac * c.e_mac};
}

// Firing rate per layer boundary: nonzero entries / (neurons * steps * batch).
template <typename Real>
SpikeStats measure_spike_freq(const ForwardTrace<Real>& tr) {
  if (tr.steps == 0 || tr.batch == 0 || tr.input.empty()) throw Error("measure_spike_freq: empty trace");
  auto rate = [&](auto&& at) {
    std::size_t ones = 0, total = 0;
    for (std::size_t t = 0; t < tr.steps; ++t) {
      const Tensor<Real>& x = at(t);
      for (Real v : x.values()) ones += v != Real(0);
      total += x.size();
    }
    return total ? static_cast<double>(ones) / static_cast<double>(total) : 0.0;
  };
  SpikeStats st;
  st.per_boundary.push_back(rate([&](std::size_t t) -> const Tensor<Real>& { return tr.input[t]; }));
  for (std::size_t l = 0; l < tr.s.size(); ++l)
    st.per_boundary.push_back(rate([&](std::size_t t) -> const Tensor<Real>& { return tr.s[l][t]; }));
  st.f_in = st.per_boundary.front();
  st.f_out = st.per_boundary.back();
  return st;
}

struct EnergyRow {
  std::string layer;
  std::string architecture;
  std::string op_kind;  // MAC | AC
  double op_count = 0.0;
  double energy_nj = 0.0;
  double ratio = 0.0;  // non-spiking / spiking; +inf when the spiking cost is zero
};

struct EnergyReport {
  std::vector<EnergyRow> rows;
  double spiking_nj = 0.0;
  double dense_nj = 0.0;
  SpikeStats stats;

  double ratio() const {
    return spiking_nj > 0.0 ? dense_nj / spiking_nj : std::numeric_limits<double>::infinity();
  }

  std::string csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "layer,architecture,op_kind,op_count,energy_nJ,ratio\n";
    for (const auto& r : rows) {
      os << r.layer << ',' << r.architecture << ',' << r.op_kind << ',' << r.op_count << ',' << r.energy_nj << ',';
      if (std::isinf(r.ratio)) os << "inf";
      else os << r.ratio;
      os << '\n';
    }
    return os.str();
  }
};

// Fully connected per-step costs from rates: spiking layers pay m*n*f_in ACs
// (plus n*n*f_out for recurrence), their dense counterparts m*n (+n*n) MACs.
// Per sample, summed over all steps.
inline void append_fc_rows(EnergyReport& rep, const std::string& layer, std::size_t m, std::size_t n, double f_in,
                           std::optional<double> f_rec, std::size_t steps, const EnergyConstants& c) {
  ArchDims d;
  d.m = m;
  d.n = n;
  SpikeStats s;
  s.f_in = f_in;
  EnergyBreakdown sp = energy_of(Arch::SpikingFC, d, s, c);
  EnergyBreakdown de = energy_of(Arch::DenseFC, d, s, c);
  if (f_rec) {
    ArchDims r = d;
    r.m = n;
    SpikeStats sr;
    sr.f_in = *f_rec;
    const auto spr = energy_of(Arch::SpikingFC, r, sr, c);
    const auto der = energy_of(Arch::DenseFC, r, sr, c);
    sp.ac_ops += spr.ac_ops, sp.ac_pj += spr.ac_pj;
    de.mac_ops += der.mac_ops, de.mac_pj += der.mac_pj;
  }
  const double T = static_cast<double>(steps);
  const double sp_nj = sp.total_nj() * T, de_nj = de.total_nj() * T;
  const double ratio = sp_nj > 0.0 ? de_nj / sp_nj : std::numeric_limits<double>::infinity();
  rep.rows.push_back({layer, "SpikingFC", "AC", sp.ac_ops * T, sp_nj, ratio});
  rep.rows.push_back({layer, "DenseFC", "MAC", de.mac_ops * T, de_nj, ratio});
  rep.spiking_nj += sp_nj;
  rep.dense_nj += de_nj;
}

// Spiking vs dense cost of a trained network on a sample batch [B x T x C].
template <typename Real>
EnergyReport energy_report(const Network<Real>& net, const Tensor<Real>& batch, const EnergyConstants& c = {}) {
  const auto tr = lif_forward(batch, net, Mode::TemporalOn);
  EnergyReport rep;
  rep.stats = measure_spike_freq(tr);
  const auto& f = rep.stats.per_boundary;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    std::optional<double> frec;
    if (layer.V) frec = f[l + 1];
    append_fc_rows(rep, "L" + std::to_string(l), layer.in(), layer.out(), f[l], frec, tr.steps, c);
  }
  append_fc_rows(rep, "readout", net.readout.W.dim(1), net.classes(), f.back(), std::nullopt, tr.steps, c);
  rep.rows.push_back({"total", "SpikingFC", "AC", 0.0, rep.spiking_nj, rep.ratio()});
  rep.rows.push_back({"total", "DenseFC", "MAC", 0.0, rep.dense_nj, rep.ratio()});
  double ac = 0.0, mac = 0.0;
  for (const auto& r : rep.rows)
    if (r.layer != "total") (r.op_kind == "AC" ? ac : mac) += r.op_count;
  rep.rows[rep.rows.size() - 2].op_count = ac;
  rep.rows.back().op_count = mac;
  return rep;
}

}  // namespace stp
