// Command-line front end: run, check-stability and compare.

#include <cmath>
#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <yaml-cpp/exceptions.h>

#include "dmhe/coordinator.hpp"
#include "dmhe/errors.hpp"
#include "dmhe/harness.hpp"
#include "dmhe/stability.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Overrides {
  std::string config;
  std::string variant;
  std::optional<std::int64_t> seed;
  std::optional<int> steps;
  std::string output_dir;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Experiment configuration (YAML)")->required();
  cmd->add_option("--variant", o.variant, "proposed, dmhe1, dmhe2, dmhe3 or fie-oracle");
  cmd->add_option("--seed", o.seed, "Run a single noise seed");
  cmd->add_option("--steps", o.steps, "Number of sampling instants T");
  cmd->add_option("--output-dir", o.output_dir, "Directory for CSV reports");
}

dmhe::ExperimentConfig load(const Overrides& o, bool filter_comparisons) {
  dmhe::ExperimentConfig cfg = dmhe::load_experiment_config(o.config);
  if (!o.variant.empty()) {
    dmhe::Variant v;
    try {
      v = dmhe::parse_variant(o.variant);
    } catch (const std::invalid_argument& e) {
      throw dmhe::ConfigError(std::string("--variant: ") + e.what());
    }
    cfg.variant = v;
    if (filter_comparisons) {
      std::erase_if(cfg.comparisons,
                    [v](const dmhe::ComparisonEntry& e) { return e.variant != v; });
    }
  }
  if (o.seed) {
    if (*o.seed < 0) throw dmhe::ConfigError("--seed must be non-negative");
    cfg.seeds = {static_cast<std::uint64_t>(*o.seed)};
  }
  if (o.steps) cfg.T = *o.steps;
  if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
  cfg.validate();
  return cfg;
}

std::string fmt_rmse(double v) {
  return std::isnan(v) ? std::string("nan") : fmt::format("{:.6f}", v);
}

void print_outcome(const dmhe::RunOutcome& r) {
  std::cout << fmt::format("  {:<12} seed {:<6} rmse {}  instants {}", r.label, r.seed,
                           fmt_rmse(r.rmse), r.completed);
  if (!r.error.empty()) {
    std::cout << "  FAILED";
    if (r.error_subsystem >= 0) {
      std::cout << " (subsystem " << r.error_subsystem + 1 << ")";
    }
    std::cout << ": " << r.error;
  }
  std::cout << "\n";
}

void print_header(const dmhe::ExperimentConfig& cfg) {
  std::cout << fmt::format("plant {}  N {}  T {}  seeds {}\n", dmhe::to_string(cfg.plant), cfg.N,
                           cfg.T, cfg.seeds.size());
}

int cmd_run(const Overrides& o) {
  const dmhe::ExperimentConfig cfg = load(o, false);
  print_header(cfg);
  const dmhe::RmseReport report = dmhe::run_experiment(cfg);
  for (const auto& r : report.runs) print_outcome(r);
  std::cout << "reports written to " << cfg.output_dir << "\n";
  return report.all_completed() ? kOk : kRuntimeError;
}

int cmd_compare(const Overrides& o) {
  const dmhe::ExperimentConfig cfg = load(o, true);
  print_header(cfg);
  const auto rows = dmhe::run_comparison(cfg);
  bool ok = true;
  for (const auto& row : rows) {
    std::cout << fmt::format("{:<12} median rmse {}\n", row.label, fmt_rmse(row.median));
    for (const auto& r : row.runs) {
      print_outcome(r);
      ok = ok && r.error.empty();
    }
  }
  std::cout << "reports written to " << cfg.output_dir << "\n";
  return ok ? kOk : kRuntimeError;
}

int cmd_check_stability(const Overrides& o) {
  const dmhe::ExperimentConfig cfg = load(o, false);
  const dmhe::StabilityReport report = dmhe::check_stability(cfg);
  std::cout << dmhe::format_stability_report(report);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed moving-horizon estimation experiments"};
  app.require_subcommand(1);
  Overrides run_o, stab_o, cmp_o;
  CLI::App* run = app.add_subcommand("run", "Estimate over a simulated run");
  add_common(run, run_o);
  CLI::App* stab =
      app.add_subcommand("check-stability", "Spectral-radius test and Assumption 1 margins");
  add_common(stab, stab_o);
  CLI::App* cmp = app.add_subcommand("compare", "RMSE of several variants over seeds");
  add_common(cmp, cmp_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (run->parsed()) return cmd_run(run_o);
    if (stab->parsed()) return cmd_check_stability(stab_o);
    return cmd_compare(cmp_o);
  } catch (const dmhe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const YAML::Exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}
