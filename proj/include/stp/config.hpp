#pragma once

// Experiment configuration: `[section]` headers, `key = value` lines and `#`
// comments. Every accepted key is registered below with its default; unknown
// keys are rejected.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stp/energy.hpp"
#include "stp/probe.hpp"
#include "stp/tasks.hpp"
#include "stp/train.hpp"

namespace stp {

struct KeySpec {
  std::string section;
  std::string key;
  std::string fallback;
  std::string help;

  std::string full() const { return section + "." + key; }
};

inline const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"task", "name", "binary_adding", "binary_adding | ps_mnist"},
      {"task", "steps", "100", "binary adding sequence length T (>= 10)"},
      {"task", "train_size", "50000", "binary adding training samples"},
      {"task", "test_size", "2000", "binary adding test samples"},
      {"task", "seed", "0", "dataset seed (test split uses seed + 1)"},
      {"task", "balance", "balanced", "balanced | natural label distribution"},
      {"task", "permutation_seed", "2024", "PS-MNIST pixel permutation seed"},
      {"task", "mnist_dir", "mnist", "IDX directory, relative to the data root"},
      {"train", "epochs", "50", "training epochs"},
      {"train", "batch_size", "250", "mini-batch size (last partial batch kept)"},
      {"train", "lr", "0.0005", "base learning rate"},
      {"train", "optimizer", "adamw", "adamw | sgd"},
      {"train", "beta1", "0.9", "AdamW beta1"},
      {"train", "beta2", "0.999", "AdamW beta2"},
      {"train", "eps", "1e-08", "AdamW epsilon"},
      {"train", "weight_decay", "0.01", "AdamW decoupled weight decay"},
      {"train", "momentum", "0", "SGD momentum"},
      {"train", "schedule", "step", "constant | step | cosine"},
      {"train", "step_factor", "0.8", "StepLR multiplicative factor"},
      {"train", "step_period", "10", "StepLR period in epochs"},
      {"train", "seed", "0", "initialization and shuffling seed"},
      {"train", "hidden", "128,128", "comma-separated hidden layer widths"},
      {"train", "recurrent", "true", "add recurrent weights to each hidden layer"},
      {"train", "recurrent_init", "zero", "zero | uniform initial recurrent weights"},
      {"train", "decay", "0.98", "LIF membrane decay in [0, 1]"},
      {"train", "threshold", "0.5", "LIF firing threshold"},
      {"train", "surrogate", "triangle", "rectangle | triangle | sigmoid | multigaussian"},
      {"train", "sg_width", "1", "rectangle width a"},
      {"train", "sg_gamma", "1", "triangle half-width"},
      {"train", "sg_slope", "4", "sigmoid slope k"},
      {"train", "sg_h", "0.15", "multi-gaussian side-lobe weight"},
      {"train", "sg_sigma", "0.5", "multi-gaussian width"},
      {"train", "algorithm", "stbp", "stbp | sdbp | notd"},
      {"train", "clip_norm", "auto", "global gradient-norm clip; auto = 1 if recurrent, 0 = off"},
      {"train", "readout_decay", "auto", "readout leak; auto = 1 for stbp/sdbp, 0 for notd"},
      {"train", "aggregation", "mean", "NoTD prediction: mean | confident | last"},
      {"train", "detach_reset", "false", "drop the reset pathway from the temporal gradient"},
      {"train", "precision", "f64", "f64 | f32"},
      {"stp", "credit_threshold", "2", "STBP-SDBP gap (points) regarded as comparable"},
      {"stp", "temporal_threshold", "2", "SDBP-NoTD gap (points) regarded as comparable"},
      {"stp", "concurrent", "true", "train the three arms concurrently"},
      {"stp", "frames_csv", "false", "export per-sample confident frames of the test split"},
      {"stp", "confidence", "max_logit", "max_logit | max_softmax | target_logit"},
      {"output", "root", "runs", "directory receiving one sub-directory per run"},
      {"energy", "mode", "analytic", "analytic | measured"},
      {"energy", "arch", "LSTM", "TCN SpikingTCN LSTM GSU Transformer SDT4 SDT1 SpikingFC DenseFC"},
      {"energy", "reference", "", "optional architecture the ratio column is taken against"},
      {"energy", "m", "1", "input size"},
      {"energy", "n", "1", "hidden size"},
      {"energy", "k", "1", "kernel size"},
      {"energy", "h", "1", "feedforward hidden dim"},
      {"energy", "T", "1", "sequence length"},
      {"energy", "T_in", "1", "internal time window"},
      {"energy", "layers", "1", "layer count multiplying per-layer cost"},
      {"energy", "f_in", "", "input spike frequency"},
      {"energy", "f_out", "", "output spike frequency"},
      {"energy", "f_conv2", "", "second convolution input frequency"},
      {"energy", "f_Q", "", "query spike frequency"},
      {"energy", "f_K", "", "key spike frequency"},
      {"energy", "f_V", "", "value spike frequency"},
      {"energy", "f_attn", "", "attention output frequency"},
      {"energy", "f_fc1", "", "first feedforward frequency"},
      {"energy", "f_fc2", "", "second feedforward frequency"},
      {"energy", "e_ac", "0.9", "pJ per accumulate"},
      {"energy", "e_mac", "4.6", "pJ per multiply-accumulate"},
      {"energy", "checkpoint", "", "measured mode: checkpoint (STPB) of a trained network"},
      {"energy", "samples", "256", "measured mode: test samples to run"},
  };
  return keys;
}

inline const KeySpec* find_key(const std::string& full) {
  for (const auto& k : config_keys())
    if (k.full() == full) return &k;
  return nullptr;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

class ExperimentConfig {
 public:
  ExperimentConfig() {
    for (const auto& k : config_keys()) values_[k.full()] = k.fallback;
  }

  static ExperimentConfig parse(const std::string& text) {
    ExperimentConfig c;
    std::istringstream is(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
      if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
      c.set(section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
  }

  static ExperimentConfig load(const std::filesystem::path& p) {
    std::ifstream is(p);
    if (!is) throw ConfigError("cannot read config " + p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& full, const std::string& value) {
    if (!find_key(full)) throw ConfigError("unknown config key '" + full + "'");
    values_[full] = value;
  }

  const std::string& get(const std::string& full) const {
    auto it = values_.find(full);
    if (it == values_.end()) throw ConfigError("unknown config key '" + full + "'");
    return it->second;
  }

  std::string serialize() const {
    std::ostringstream os;
    std::string section;
    for (const auto& k : config_keys()) {
      if (k.section != section) {
        if (!section.empty()) os << '\n';
        section = k.section;
        os << '[' << section << "]\n";
      }
      os << k.key << " = " << get(k.full()) << '\n';
    }
    return os.str();
  }

  // Identity of a run: every key except where outputs are written.
  std::string hash(const std::string& salt = "") const {
    std::string text = salt;
    for (const auto& k : config_keys())
      if (k.section != "output") text += ";" + k.full() + "=" + get(k.full());
    return hex(sha256(text));
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  // Typed accessors.
  std::string str(const std::string& k) const { return get(k); }

  double real(const std::string& k) const {
    const std::string& v = get(k);
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError(k + ": expected a number, got '" + v + "'");
    }
  }

  std::uint64_t integer(const std::string& k) const {
    const std::string& v = get(k);
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
      throw ConfigError(k + ": expected a non-negative integer, got '" + v + "'");
    return out;
  }

  std::uint32_t u32(const std::string& k) const {
    const auto v = integer(k);
    if (v > 0xFFFFFFFFull) throw ConfigError(k + ": value too large");
    return static_cast<std::uint32_t>(v);
  }

  bool boolean(const std::string& k) const {
    const std::string& v = get(k);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(k + ": expected true/false, got '" + v + "'");
  }

  std::optional<double> optional_real(const std::string& k) const {
    if (get(k).empty()) return std::nullopt;
    return real(k);
  }

  BinaryAddingSpec binary_adding() const {
    BinaryAddingSpec s;
    s.steps = u32("task.steps");
    s.train_size = u32("task.train_size");
    s.test_size = u32("task.test_size");
    s.seed = integer("task.seed");
    const auto& b = get("task.balance");
    if (b == "balanced") s.balance = Balance::Balanced;
    else if (b == "natural") s.balance = Balance::Natural;
    else throw ConfigError("task.balance: expected balanced | natural");
    s.validate();
    return s;
  }

  TrainConfig train() const {
    TrainConfig c;
    c.epochs = u32("train.epochs");
    c.batch_size = u32("train.batch_size");
    c.lr = real("train.lr");
    c.optimizer = parse_optimizer(get("train.optimizer"));
    c.adamw = {real("train.beta1"), real("train.beta2"), real("train.eps"), real("train.weight_decay")};
    c.momentum = real("train.momentum");
    c.schedule = parse_schedule(get("train.schedule"));
    c.step_factor = real("train.step_factor");
    c.step_period = u32("train.step_period");
    c.seed = integer("train.seed");
    c.hidden.clear();
    std::istringstream hs(get("train.hidden"));
    for (std::string tok; std::getline(hs, tok, ',');) {
      tok = trim(tok);
      std::uint32_t w = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), w);
      if (ec != std::errc() || p != tok.data() + tok.size() || w == 0)
        throw ConfigError("train.hidden: bad width '" + tok + "'");
      c.hidden.push_back(w);
    }
    c.recurrent = boolean("train.recurrent");
    const auto& ri = get("train.recurrent_init");
    if (ri != "zero" && ri != "uniform") throw ConfigError("train.recurrent_init: expected zero | uniform");
    c.recurrent_zero_init = ri == "zero";
    c.lif = {real("train.decay"), real("train.threshold")};
    c.surrogate.kind = parse_surrogate(get("train.surrogate"));
    c.surrogate.width = real("train.sg_width");
    c.surrogate.gamma = real("train.sg_gamma");
    c.surrogate.slope = real("train.sg_slope");
    c.surrogate.h = real("train.sg_h");
    c.surrogate.sigma = real("train.sg_sigma");
    c.algorithm = parse_algorithm(get("train.algorithm"));
    c.clip_norm = get("train.clip_norm") == "auto" ? -1.0 : real("train.clip_norm");
    if (get("train.clip_norm") != "auto" && c.clip_norm < 0.0) throw ConfigError("train.clip_norm must be >= 0");
    c.readout_decay = get("train.readout_decay") == "auto" ? -1.0 : real("train.readout_decay");
    if (get("train.readout_decay") != "auto" && c.readout_decay < 0.0)
      throw ConfigError("train.readout_decay must be >= 0");
    c.aggregation = parse_aggregation(get("train.aggregation"));
    c.detach_reset = boolean("train.detach_reset");
    const auto& prec = get("train.precision");
    if (prec != "f32" && prec != "f64") throw ConfigError("train.precision: expected f32 | f64");
    c.validate();
    return c;
  }

  Thresholds thresholds() const {
    return {real("stp.credit_threshold"), real("stp.temporal_threshold")};
  }

  EnergyConstants energy_constants() const { return {real("energy.e_ac"), real("energy.e_mac")}; }

  ArchDims arch_dims() const {
    ArchDims d;
    d.m = integer("energy.m");
    d.n = integer("energy.n");
    d.k = integer("energy.k");
    d.h = integer("energy.h");
    d.T = integer("energy.T");
    d.T_in = integer("energy.T_in");
    d.layers = integer("energy.layers");
    d.validate();
    return d;
  }

  SpikeStats spike_stats() const {
    SpikeStats s;
    s.f_in = optional_real("energy.f_in");
    s.f_out = optional_real("energy.f_out");
    s.f_conv2 = optional_real("energy.f_conv2");
    s.f_q = optional_real("energy.f_Q");
    s.f_k = optional_real("energy.f_K");
    s.f_v = optional_real("energy.f_V");
    s.f_attn = optional_real("energy.f_attn");
    s.f_fc1 = optional_real("energy.f_fc1");
    s.f_fc2 = optional_real("energy.f_fc2");
    return s;
  }

 private:
  std::map<std::string, std::string> values_;
};

inline std::string config_help() {
  std::ostringstream os;
  os << "Config keys (file `[section]` + `key = value`, or override with --section.key VALUE):\n";
  for (const auto& k : config_keys())
    os << "  " << k.full() << " (default: " << (k.fallback.empty() ? "<unset>" : k.fallback) << ")  " << k.help
       << '\n';
  return os.str();
}

}  // namespace stp
