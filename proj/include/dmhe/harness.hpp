#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dmhe/coordinator.hpp"
#include "dmhe/estimator.hpp"
#include "dmhe/plant.hpp"
#include "dmhe/reactor_separator.hpp"
#include "dmhe/stability.hpp"
#include "dmhe/system_model.hpp"

namespace dmhe {

enum class PlantKind { kLinear, kReactorSeparator };

std::string to_string(PlantKind kind);
PlantKind parse_plant_kind(const std::string& name);

// Per-subsystem weights as multiples of the identity.
struct WeightSpec {
  double P0 = 1.0;
  double Q = 1.0;
  double R = 1.0;

  bool operator==(const WeightSpec&) const = default;
};

struct ComparisonEntry {
  std::string label;
  Variant variant = Variant::kProposed;
  std::optional<WeightSpec> weights;  // unset: the experiment's weights
  std::optional<int> N;

  bool operator==(const ComparisonEntry&) const = default;
};

// Box bounds in physical units for one subsystem (empty = unbounded).
struct BoxSpec {
  Eigen::VectorXd x_lower, x_upper, w_lower, w_upper;

  bool operator==(const BoxSpec& o) const;
};

struct ExperimentConfig {
  PlantKind plant = PlantKind::kReactorSeparator;
  std::string plant_file;  // model file or reactor parameters, as written
  std::string base_dir;    // resolves relative paths; not serialized
  Variant variant = Variant::kProposed;
  int N = 4;
  int T = 100;
  std::vector<std::uint64_t> seeds{0};
  Eigen::VectorXd x0;      // empty: the plant's reference state
  Eigen::VectorXd x_bar0;  // empty: x_bar0_factor · x0
  double x_bar0_factor = 1.3;
  std::optional<WeightSpec> weights;  // unset: the model file's weights
  double process_std = 0.0;
  double measurement_std = 0.0;
  std::vector<BoxSpec> constraints;  // one per subsystem, or empty
  std::vector<ComparisonEntry> comparisons;
  std::string output_dir = "out";
  int workers = 1;

  bool operator==(const ExperimentConfig& o) const;
  void validate() const;
  std::string resolve(const std::string& path) const;
};

ExperimentConfig parse_experiment_config(const std::string& yaml_text,
                                         const std::string& base_dir = ".");
ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_to_yaml(const ExperimentConfig& cfg);

// Plant objects resolved from a config.
struct PlantSetup {
  PlantKind kind = PlantKind::kReactorSeparator;
  std::optional<PartitionedLinearModel> linear;
  std::optional<ReactorSeparatorConfig> reactor;
  ScalingMap scaling;
  Eigen::VectorXd x0;      // physical
  Eigen::VectorXd x_bar0;  // physical
  Partition partition;
};

PlantSetup prepare_plant(const ExperimentConfig& cfg);

// sqrt of the mean over instants and states of the squared scaled error.
double compute_rmse(const std::vector<Eigen::VectorXd>& truth,
                    const std::vector<Eigen::VectorXd>& estimates, const ScalingMap& scaling);

struct RunOutcome {
  std::string label;
  Variant variant = Variant::kProposed;
  std::uint64_t seed = 0;
  double rmse = 0.0;
  int completed = 0;
  std::string error;  // empty on success
  int error_subsystem = -1;
};

struct RmseReport {
  std::vector<RunOutcome> runs;

  bool all_completed() const;
};

struct RunArtifacts {
  RunOutcome outcome;
  PlantTrace trace;  // scaled coordinates
  EstimateRecord record;
};

// Simulates the plant for one seed and runs one estimator variant; writes
// per-run CSV files into `run_dir` unless it is empty.
RunArtifacts run_single(const ExperimentConfig& cfg, const PlantSetup& plant,
                        const ComparisonEntry& entry, std::uint64_t seed,
                        const std::string& run_dir);

// Runs cfg.variant over every seed and writes trajectories, estimates, the
// RMSE table and (linear plants) a stability report under cfg.output_dir.
RmseReport run_experiment(const ExperimentConfig& cfg);

struct ComparisonRow {
  std::string label;
  Variant variant = Variant::kProposed;
  double median = 0.0;
  std::vector<RunOutcome> runs;  // in seed order
};

// Runs every comparison entry (cfg.variant alone when none are listed) and
// writes per-seed and median RMSEs.
std::vector<ComparisonRow> run_comparison(const ExperimentConfig& cfg);

// Spectral-radius test plus Assumption-1 margins along a run of cfg.variant
// on the first seed. Linear plants only.
StabilityReport check_stability(const ExperimentConfig& cfg);

double median(std::vector<double> values);

}  // namespace dmhe
