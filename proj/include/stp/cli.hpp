#pragma once

// Subcommand bodies shared by the `stp` executable and the integration tests.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "stp/config.hpp"

namespace stp::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kDivergence = 4 };

inline constexpr const char* kDataRootEnv = "STP_DATA_ROOT";

inline fs::path data_root() {
  const char* env = std::getenv(kDataRootEnv);
  return env && *env ? fs::path(env) : fs::path("data");
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + p.string());
  os << text;
  if (!os) throw DataError("write failed for " + p.string());
}

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Task identity: name plus the hash of everything that determines its bytes.
struct TaskFiles {
  std::string name;
  std::string spec_hash;
  fs::path train;
  fs::path test;
};

inline TaskFiles task_files(const ExperimentConfig& cfg, const fs::path& root) {
  TaskFiles f;
  f.name = cfg.str("task.name");
  if (f.name == "binary_adding") {
    f.spec_hash = cfg.binary_adding().hash();
  } else if (f.name == "ps_mnist") {
    f.spec_hash = hex(sha256("ps_mnist;perm_seed=" + cfg.str("task.permutation_seed")));
  } else {
    throw ConfigError("task.name: expected binary_adding | ps_mnist");
  }
  const std::string stem = f.name + "_" + f.spec_hash.substr(0, 12);
  f.train = root / (stem + "_train.stpd");
  f.test = root / (stem + "_test.stpd");
  return f;
}

// Timestamps live only in this sidecar so every other output is reproducible.
inline void append_log(const fs::path& dir, const std::string& line) {
  std::ofstream os(dir / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  os << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ") << ' ' << line << '\n';
}

inline fs::path run_dir(const ExperimentConfig& cfg, const std::string& command) {
  const fs::path dir = fs::path(cfg.str("output.root")) / (command + "-" + cfg.hash(command).substr(0, 12));
  fs::create_directories(dir);
  write_text(dir / "config.ini", cfg.serialize());
  return dir;
}

inline int cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out, const fs::path& root = data_root()) {
  const TaskFiles files = task_files(cfg, root);
  fs::create_directories(root);
  if (files.name == "binary_adding") {
    const auto spec = cfg.binary_adding();
    const auto [train, test] = gen_binary_adding<float>(spec);
    save_dataset(train, files.train);
    save_dataset(test, files.test);
    out << "binary_adding T=" << spec.steps << " train=" << train.samples() << " test=" << test.samples() << '\n';
  } else {
    const fs::path mdir = root / cfg.str("task.mnist_dir");
    const auto seed = cfg.integer("task.permutation_seed");
    const auto perm = ps_mnist_permutation(seed);
    const auto tr = load_mnist_idx<float>(mdir / "train-images-idx3-ubyte", mdir / "train-labels-idx1-ubyte");
    const auto te = load_mnist_idx<float>(mdir / "t10k-images-idx3-ubyte", mdir / "t10k-labels-idx1-ubyte");
    auto train = make_ps_mnist(tr.images, tr.labels, perm, seed);
    auto test = make_ps_mnist(te.images, te.labels, perm, seed);
    train.meta.spec_hash = test.meta.spec_hash = files.spec_hash;
    save_dataset(train, files.train);
    save_dataset(test, files.test);
    out << "ps_mnist train=" << train.samples() << " test=" << test.samples() << '\n';
  }
  out << "spec_hash " << files.spec_hash << '\n' << files.train.string() << '\n' << files.test.string() << '\n';
  return kOk;
}

template <typename Real>
std::pair<SequenceDataset<Real>, SequenceDataset<Real>> load_task(const ExperimentConfig& cfg, const fs::path& root) {
  const TaskFiles files = task_files(cfg, root);
  if (!fs::exists(files.train) || !fs::exists(files.test))
    throw DataError("dataset files for " + files.name + " not found under " + root.string() +
                    " (run `stp gen-data` with the same [task] section)");
  auto train = load_dataset<Real>(files.train);
  auto test = load_dataset<Real>(files.test);
  train.meta.spec_hash = test.meta.spec_hash = files.spec_hash;
  return {std::move(train), std::move(test)};
}

template <typename Real>
int train_impl(const ExperimentConfig& cfg, std::ostream& out, const fs::path& root) {
  const TrainConfig tc = cfg.train();
  const auto [train, test] = load_task<Real>(cfg, root);
  const fs::path dir = run_dir(cfg, "train");
  append_log(dir, "train start");
  const std::string run_id = dir.filename().string();
  auto res = train_run<Real>(tc, train, test, std::nullopt, [&](const EpochMetrics& m) {
    out << "epoch " << m.epoch << " loss " << format_real(m.train_loss) << " test_acc "
        << format_real(m.test_accuracy) << std::endl;
  });
  write_text(dir / "metrics.csv", metrics_csv(run_id, train.meta.task, tc.algorithm, res.history));
  res.best.save(dir / "checkpoint.stpb");
  res.final_state.to_checkpoint(tc).save(dir / "final.stpb");
  nlohmann::ordered_json summary;
  summary["task"] = train.meta.task;
  summary["algorithm"] = std::string(to_string(tc.algorithm));
  summary["epochs"] = tc.epochs;
  summary["final_test_accuracy"] = res.final_test_accuracy;
  summary["best_test_accuracy"] = res.best_test_accuracy;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  append_log(dir, "train done");
  out << "final_test_accuracy " << format_real(res.final_test_accuracy) << '\n' << "run_dir " << dir.string() << '\n';
  return kOk;
}

inline int cmd_train(const ExperimentConfig& cfg, std::ostream& out, const fs::path& root = data_root()) {
  return cfg.str("train.precision") == "f32" ? train_impl<float>(cfg, out, root) : train_impl<double>(cfg, out, root);
}

template <typename Real>
int stp_impl(const ExperimentConfig& cfg, std::ostream& out, const fs::path& root) {
  const TrainConfig tc = cfg.train();
  const auto [train, test] = load_task<Real>(cfg, root);
  const fs::path dir = run_dir(cfg, "stp");
  append_log(dir, "stp start");
  std::array<std::optional<TrainResult<Real>>, 3> trained;
  StpReport rep = run_stp(train, test, tc, cfg.thresholds(), cfg.boolean("stp.concurrent"), &trained);
  rep.metadata["balance"] = cfg.str("task.balance");
  rep.metadata["steps"] = train.steps();
  const std::string run_id = dir.filename().string();
  std::string csv;
  for (std::size_t i = 0; i < 3; ++i) csv += metrics_csv(run_id, rep.task, rep.arms[i].algorithm, rep.arms[i].history, i == 0);
  write_text(dir / "metrics.csv", csv);
  write_text(dir / "report.json", rep.to_json().dump(2) + "\n");
  TrainConfig arm_cfg = tc;
  arm_cfg.recurrent_zero_init = true;
  std::string frames;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!trained[i]) continue;
    arm_cfg.algorithm = rep.arms[i].algorithm;
    const std::string algo(to_string(arm_cfg.algorithm));
    trained[i]->best.save(dir / ("checkpoint_" + algo + ".stpb"));
    if (cfg.boolean("stp.frames_csv"))
      frames += confident_frames_csv(trained[i]->final_state.net, test, arm_cfg.algorithm,
                                     parse_confidence(cfg.str("stp.confidence")), frames.empty());
  }
  if (!frames.empty()) write_text(dir / "frames.csv", frames);
  append_log(dir, "stp done");
  for (const auto& a : rep.arms)
    out << to_string(a.algorithm) << ' ' << (a.completed ? format_real(a.accuracy) : "failed") << '\n';
  out << "verdict " << to_string(rep.verdict) << '\n' << "run_dir " << dir.string() << '\n';
  return rep.all_completed() ? kOk : kDivergence;
}

inline int cmd_stp(const ExperimentConfig& cfg, std::ostream& out, const fs::path& root = data_root()) {
  return cfg.str("train.precision") == "f32" ? stp_impl<float>(cfg, out, root) : stp_impl<double>(cfg, out, root);
}

inline std::string analytic_energy_csv(const ExperimentConfig& cfg) {
  const Arch arch = parse_arch(cfg.str("energy.arch"));
  const ArchDims dims = cfg.arch_dims();
  const EnergyConstants consts = cfg.energy_constants();
  const SpikeStats stats = cfg.spike_stats();
  const auto e = energy_of(arch, dims, stats, consts);
  std::optional<double> ratio;
  if (!cfg.str("energy.reference").empty()) {
    const auto ref = energy_of(parse_arch(cfg.str("energy.reference")), dims, stats, consts);
    ratio = ref.total_pj() > 0.0 ? e.total_pj() / ref.total_pj() : std::numeric_limits<double>::infinity();
  }
  const double L = static_cast<double>(dims.layers);
  std::ostringstream os;
  os.precision(10);
  auto ratio_str = [&] {
    if (!ratio) return std::string();
    if (std::isinf(*ratio)) return std::string("inf");
    std::ostringstream r;
    r.precision(10);
    r << *ratio;
    return r.str();
  };
  os << "layer,architecture,op_kind,op_count,energy_nJ,ratio\n";
  const std::string name(to_string(arch));
  os << "per_layer," << name << ",AC," << e.ac_ops << ',' << e.ac_pj / 1000.0 << ',' << ratio_str() << '\n';
  os << "per_layer," << name << ",MAC," << e.mac_ops << ',' << e.mac_pj / 1000.0 << ',' << ratio_str() << '\n';
  os << "total," << name << ",AC," << e.ac_ops * L << ',' << e.ac_pj * L / 1000.0 << ',' << ratio_str() << '\n';
  os << "total," << name << ",MAC," << e.mac_ops * L << ',' << e.mac_pj * L / 1000.0 << ',' << ratio_str() << '\n';
  return os.str();
}

template <typename Real>
std::string measured_energy_csv(const ExperimentConfig& cfg, const fs::path& root) {
  const TrainConfig tc = cfg.train();
  const auto [train, test] = load_task<Real>(cfg, root);
  const auto ckpt = Checkpoint::load(cfg.str("energy.checkpoint"));
  const auto st = TrainState<Real>::from_checkpoint(ckpt, tc, test.channels(), test.n_classes);
  const std::size_t n = std::min<std::size_t>(test.samples(), cfg.integer("energy.samples"));
  std::vector<std::uint32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0u);
  return energy_report(st.net, test.gather(idx), cfg.energy_constants()).csv();
}

inline int cmd_energy(const ExperimentConfig& cfg, std::ostream& out, const fs::path& root = data_root()) {
  const auto& mode = cfg.str("energy.mode");
  std::string csv;
  if (mode == "analytic") {
    csv = analytic_energy_csv(cfg);
  } else if (mode == "measured") {
    if (cfg.str("energy.checkpoint").empty()) throw ConfigError("measured mode needs energy.checkpoint");
    csv = cfg.str("train.precision") == "f32" ? measured_energy_csv<float>(cfg, root)
                                               : measured_energy_csv<double>(cfg, root);
  } else {
    throw ConfigError("energy.mode: expected analytic | measured");
  }
  const fs::path dir = run_dir(cfg, "energy");
  write_text(dir / "energy.csv", csv);
  out << csv << "run_dir " << dir.string() << '\n';
  return kOk;
}

// Table-style summary over stp run directories.
inline std::string merge_reports(const std::vector<fs::path>& runs) {
  std::ostringstream os;
  os.precision(10);
  os << "run,task,seed,algorithm,accuracy,delta,verdict,credit_threshold,temporal_threshold\n";
  for (const auto& r : runs) {
    const fs::path file = fs::is_directory(r) ? r / "report.json" : r;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_text(file));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(file.string() + ": " + e.what());
    }
    const auto rep = StpReport::from_json(j);
    const std::string run = fs::is_directory(r) ? r.filename().string() : r.parent_path().filename().string();
    for (const auto& a : rep.arms) {
      os << run << ',' << rep.task << ',' << rep.seed << ',' << to_string(a.algorithm) << ',';
      if (a.completed) os << a.accuracy << ',' << a.delta;
      else os << "failed,";
      os << ',' << to_string(rep.verdict) << ',' << rep.thresholds.credit << ',' << rep.thresholds.temporal << '\n';
    }
  }
  return os.str();
}

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return kConfigError;
  if (dynamic_cast<const DataError*>(&e)) return kDataError;
  if (dynamic_cast<const DivergenceError*>(&e) || dynamic_cast<const NumericError*>(&e)) return kDivergence;
  return kFailure;
}

}  // namespace stp::cli
