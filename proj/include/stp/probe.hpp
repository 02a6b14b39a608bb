#pragma once

// The segregated temporal probe: train one network per algorithm, compare the
// three accuracies and decide whether a benchmark exercises temporal processing.

#include <array>
#include <cmath>
#include <future>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stp/train.hpp"

namespace stp {

enum class Verdict { Suitable, UnsuitableTemporalCreditUnneeded, UnsuitableFrameLevelSufficient, Withheld };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Suitable: return "Suitable";
    case Verdict::UnsuitableTemporalCreditUnneeded: return "UnsuitableTemporalCreditUnneeded";
    case Verdict::UnsuitableFrameLevelSufficient: return "UnsuitableFrameLevelSufficient";
    case Verdict::Withheld: return "Withheld";
  }
  return "?";
}

inline Verdict parse_verdict(std::string_view s) {
  for (auto v : {Verdict::Suitable, Verdict::UnsuitableTemporalCreditUnneeded,
                 Verdict::UnsuitableFrameLevelSufficient, Verdict::Withheld})
    if (to_string(v) == s) return v;
  throw DataError("unknown verdict '" + std::string(s) + "'");
}

inline bool is_unsuitable(Verdict v) {
  return v == Verdict::UnsuitableTemporalCreditUnneeded || v == Verdict::UnsuitableFrameLevelSufficient;
}

// Accuracy-point gaps below which two arms count as comparable.
struct Thresholds {
  double credit = 2.0;    // STBP vs SDBP
  double temporal = 2.0;  // SDBP vs NoTD
};

// Criteria in order: SDBP within `credit` of STBP, then NoTD within `temporal`
// of SDBP, otherwise suitable. Accuracies are percentages.
inline Verdict classify_verdict(double acc_stbp, double acc_sdbp, double acc_notd, Thresholds th = {}) {
  for (double a : {acc_stbp, acc_sdbp, acc_notd})
    if (!(a >= 0.0 && a <= 100.0)) throw Error("accuracies must lie in [0, 100]");
  if (acc_stbp - acc_sdbp <= th.credit) return Verdict::UnsuitableTemporalCreditUnneeded;
  if (acc_sdbp - acc_notd <= th.temporal) return Verdict::UnsuitableFrameLevelSufficient;
  return Verdict::Suitable;
}

enum class Confidence { MaxLogit, MaxSoftmax, TargetLogit };

inline Confidence parse_confidence(std::string_view s) {
  if (s == "max_logit") return Confidence::MaxLogit;
  if (s == "max_softmax") return Confidence::MaxSoftmax;
  if (s == "target_logit") return Confidence::TargetLogit;
  throw ConfigError("unknown confidence measure '" + std::string(s) + "'");
}

// Step at which the output layer responds most strongly; ties go to the earliest step.
template <typename Real>
std::size_t confident_frame(const Tensor<Real>& per_step_logits, Confidence measure = Confidence::MaxLogit,
                            int target = -1) {
  if (per_step_logits.rank() != 2 || per_step_logits.dim(0) == 0)
    throw ShapeError("confident_frame expects [T x classes] with T >= 1");
  const std::size_t T = per_step_logits.dim(0), K = per_step_logits.dim(1);
  if (measure == Confidence::TargetLogit && (target < 0 || static_cast<std::size_t>(target) >= K))
    throw Error("confident_frame: target class out of range");
  std::size_t best_t = 0;
  double best = -INFINITY;
  for (std::size_t t = 0; t < T; ++t) {
    auto row = per_step_logits.row(t);
    double score = 0.0;
    if (measure == Confidence::TargetLogit) {
      score = static_cast<double>(row[static_cast<std::size_t>(target)]);
    } else {
      double mx = -INFINITY;
      for (Real v : row) mx = std::max(mx, static_cast<double>(v));
      if (measure == Confidence::MaxLogit) {
        score = mx;
      } else {
        double z = 0.0;
        for (Real v : row) z += std::exp(static_cast<double>(v) - mx);
        score = 1.0 / z;
      }
    }
    if (score > best) best = score, best_t = t;
  }
  return best_t;
}

// Per-sample confident frames of one trained network, as CSV rows.
template <typename Real>
std::string confident_frames_csv(const Network<Real>& net, const SequenceDataset<Real>& ds, Algorithm algo,
                                 Confidence measure = Confidence::MaxLogit, bool header = true) {
  std::ostringstream os;
  if (header) os << "sample,label,algorithm,frame\n";
  const std::size_t batch = 500;
  std::vector<std::uint32_t> idx;
  for (std::size_t start = 0; start < ds.samples(); start += batch) {
    const std::size_t end = std::min(ds.samples(), start + batch);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = static_cast<std::uint32_t>(i);
    const auto tr = lif_forward(ds.gather(idx), net, mode_for(algo));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      Tensor<Real> logits({tr.steps, net.classes()});
      for (std::size_t t = 0; t < tr.steps; ++t)
        for (std::size_t k = 0; k < net.classes(); ++k) logits(t, k) = tr.o[t](b, k);
      os << start + b << ',' << ds.labels[start + b] << ',' << to_string(algo) << ','
         << confident_frame(logits, measure, ds.labels[start + b]) << '\n';
    }
  }
  return os.str();
}

struct ArmResult {
  Algorithm algorithm = Algorithm::STBP;
  bool completed = false;
  double accuracy = 0.0;  // percent
  double delta = 0.0;     // accuracy - STBP accuracy
  std::string error;
  std::vector<EpochMetrics> history;
};

struct StpReport {
  std::string task;
  std::uint64_t seed = 0;
  Thresholds thresholds;
  std::array<ArmResult, 3> arms;
  Verdict verdict = Verdict::Withheld;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

  bool all_completed() const {
    return arms[0].completed && arms[1].completed && arms[2].completed;
  }

  const ArmResult& arm(Algorithm a) const { return arms[static_cast<std::size_t>(a)]; }

  // Recomputes deltas and the verdict from the stored accuracies.
  void finalize() {
    if (!all_completed()) {
      verdict = Verdict::Withheld;
      return;
    }
    for (auto& a : arms) a.delta = a.accuracy - arms[0].accuracy;
    verdict = classify_verdict(arms[0].accuracy, arms[1].accuracy, arms[2].accuracy, thresholds);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["task"] = task;
    j["seed"] = seed;
    j["thresholds"] = {{"credit", thresholds.credit}, {"temporal", thresholds.temporal}};
    auto arr = nlohmann::ordered_json::array();
    for (const auto& a : arms) {
      nlohmann::ordered_json ja;
      ja["algorithm"] = std::string(to_string(a.algorithm));
      ja["status"] = a.completed ? "completed" : "failed";
      ja["accuracy"] = a.accuracy;
      ja["delta"] = a.delta;
      if (!a.error.empty()) ja["error"] = a.error;
      arr.push_back(ja);
    }
    j["arms"] = arr;
    j["verdict"] = std::string(to_string(verdict));
    j["metadata"] = metadata;
    return j;
  }

  static StpReport from_json(const nlohmann::json& j) {
    StpReport r;
    try {
      r.task = j.at("task").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.thresholds.credit = j.at("thresholds").at("credit").get<double>();
      r.thresholds.temporal = j.at("thresholds").at("temporal").get<double>();
      const auto& arms = j.at("arms");
      if (arms.size() != 3) throw DataError("report must hold three arms");
      for (std::size_t i = 0; i < 3; ++i) {
        auto& a = r.arms[i];
        a.algorithm = parse_algorithm(arms[i].at("algorithm").get<std::string>());
        a.completed = arms[i].at("status").get<std::string>() == "completed";
        a.accuracy = arms[i].at("accuracy").get<double>();
        a.delta = arms[i].at("delta").get<double>();
        if (arms[i].contains("error")) a.error = arms[i]["error"].get<std::string>();
      }
      r.verdict = parse_verdict(j.at("verdict").get<std::string>());
      if (j.contains("metadata")) r.metadata = j["metadata"];
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("malformed report: ") + e.what());
    }
    return r;
  }
};

template <typename Real>
struct ArmOutcome {
  ArmResult result;
  std::optional<TrainResult<Real>> training;
};

template <typename Real>
ArmOutcome<Real> run_arm(TrainConfig cfg, Algorithm algo, const SequenceDataset<Real>& train,
                         const SequenceDataset<Real>& test) {
  cfg.algorithm = algo;
  ArmOutcome<Real> out;
  out.result.algorithm = algo;
  try {
    auto tr = train_run(cfg, train, test);
    out.result.completed = true;
    out.result.accuracy = 100.0 * tr.final_test_accuracy;
    out.result.history = tr.history;
    out.training = std::move(tr);
  } catch (const DivergenceError& e) {
    out.result.error = e.what();
  } catch (const NumericError& e) {
    out.result.error = e.what();
  }
  return out;
}

// Three arms that differ only in the algorithm: same seed, so the same W draws
// (recurrent matrices start at zero in every arm), same dataset bytes.
template <typename Real>
StpReport run_stp(const SequenceDataset<Real>& train, const SequenceDataset<Real>& test, TrainConfig base,
                  Thresholds th = {}, bool concurrent = true,
                  std::array<std::optional<TrainResult<Real>>, 3>* trained = nullptr) {
  base.recurrent_zero_init = true;
  StpReport rep;
  rep.task = train.meta.task;
  rep.seed = base.seed;
  rep.thresholds = th;
  constexpr std::array<Algorithm, 3> algos{Algorithm::STBP, Algorithm::SDBP, Algorithm::NoTD};
  std::array<ArmOutcome<Real>, 3> outcomes;
  if (concurrent) {
    std::array<std::future<ArmOutcome<Real>>, 3> fut;
    for (std::size_t i = 0; i < 3; ++i)
      fut[i] = std::async(std::launch::async, [&, i] { return run_arm(base, algos[i], train, test); });
    for (std::size_t i = 0; i < 3; ++i) outcomes[i] = fut[i].get();
  } else {
    for (std::size_t i = 0; i < 3; ++i) outcomes[i] = run_arm(base, algos[i], train, test);
  }
  for (std::size_t i = 0; i < 3; ++i) {
    rep.arms[i] = outcomes[i].result;
    if (trained) (*trained)[i] = std::move(outcomes[i].training);
  }
  rep.metadata["config_hash"] = hex(base.hash());
  rep.metadata["epochs"] = base.epochs;
  rep.metadata["dataset_spec_hash"] = train.meta.spec_hash;
  rep.metadata["train_samples"] = train.samples();
  rep.metadata["test_samples"] = test.samples();
  rep.finalize();
  return rep;
}

}  // namespace stp
