// stp: dataset generation, training, the temporal probe, energy estimates and reports.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stp/cli.hpp"

namespace {

struct Common {
  std::string config;
  std::string algorithm;
  std::optional<std::uint32_t> epochs;
  std::vector<double> thresholds;
  std::string out;
};

void add_common(CLI::App* sub, Common& c) {
  sub->allow_extras();
  sub->add_option("-c,--config", c.config, "config file")->check(CLI::ExistingFile);
  sub->add_option("--algorithm", c.algorithm, "shorthand for --train.algorithm");
  sub->add_option("--epochs", c.epochs, "shorthand for --train.epochs");
  sub->add_option("--thresholds", c.thresholds, "credit and temporal thresholds")->expected(2);
  sub->add_option("--out", c.out, "shorthand for --output.root");
}

// Config file first, then `--section.key value` extras, then shorthands.
stp::ExperimentConfig merged_config(const Common& c, const std::vector<std::string>& extras) {
  auto cfg = c.config.empty() ? stp::ExperimentConfig{} : stp::ExperimentConfig::load(c.config);
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0) throw stp::ConfigError("unexpected argument '" + a + "'");
    std::string key = a.substr(2), value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.erase(eq);
    } else {
      if (i + 1 >= extras.size()) throw stp::ConfigError("missing value for --" + key);
      value = extras[++i];
    }
    cfg.set(key, value);
  }
  if (!c.algorithm.empty()) cfg.set("train.algorithm", c.algorithm);
  if (c.epochs) cfg.set("train.epochs", std::to_string(*c.epochs));
  if (!c.thresholds.empty()) {
    cfg.set("stp.credit_threshold", stp::format_real(c.thresholds[0]));
    cfg.set("stp.temporal_threshold", stp::format_real(c.thresholds[1]));
  }
  if (!c.out.empty()) cfg.set("output.root", c.out);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segregated temporal probe for spiking network benchmarks"};
  app.require_subcommand(1);
  app.footer(stp::config_help() + "\nData root: $" + std::string(stp::cli::kDataRootEnv) + " (default ./data)\n" +
             "Exit codes: 0 ok, 2 config error, 3 data error, 4 training divergence");

  Common gen_o, train_o, stp_o, energy_o;
  auto* gen = app.add_subcommand("gen-data", "materialize the task's train/test splits");
  auto* train = app.add_subcommand("train", "train one network");
  auto* probe = app.add_subcommand("stp", "train STBP, SDBP and NoTD arms and classify the task");
  auto* energy = app.add_subcommand("energy", "analytic or measured energy report");
  add_common(gen, gen_o);
  add_common(train, train_o);
  add_common(probe, stp_o);
  add_common(energy, energy_o);

  auto* report = app.add_subcommand("report", "merge stp run directories into one summary CSV");
  std::vector<std::string> runs;
  std::string report_out;
  report->add_option("runs", runs, "run directories or report.json files")->required();
  report->add_option("--out", report_out, "output CSV (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : stp::cli::kConfigError;
  }

  try {
    if (*report) {
      std::vector<std::filesystem::path> paths(runs.begin(), runs.end());
      const std::string csv = stp::cli::merge_reports(paths);
      if (report_out.empty()) std::cout << csv;
      else stp::cli::write_text(report_out, csv);
      return stp::cli::kOk;
    }
    if (*gen) return stp::cli::cmd_gen_data(merged_config(gen_o, gen->remaining()), std::cout);
    if (*train) return stp::cli::cmd_train(merged_config(train_o, train->remaining()), std::cout);
    if (*probe) return stp::cli::cmd_stp(merged_config(stp_o, probe->remaining()), std::cout);
    if (*energy) return stp::cli::cmd_energy(merged_config(energy_o, energy->remaining()), std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return stp::cli::exit_code_for(e);
  }
  return stp::cli::kFailure;
}
