#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dmhe/arrival_cost.hpp"
#include "dmhe/estimator.hpp"
#include "dmhe/system_model.hpp"

namespace dmhe {

enum class Variant { kProposed, kDmhe1, kDmhe2, kDmhe3, kFieOracle };
enum class ArrivalMode { kRecursive, kConstant, kNone };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct VariantConfig {
  Variant variant = Variant::kProposed;
  int N = 4;
  bool use_neighbor_measurements = true;
  ArrivalMode arrival_mode = ArrivalMode::kRecursive;

  static VariantConfig make(Variant v, int N);
  // Throws std::invalid_argument when the flags contradict the variant.
  void validate() const;
};

// Latest estimates of every x_j, j < k, as seen at the start of instant k.
// Entry 0 is the prior center x̄_0; entry j ≥ 1 carries the instant at which
// it was produced.
struct ExchangeSnapshot {
  int stamp = -1;  // k − 1
  std::vector<Eigen::VectorXd> states;
  std::vector<int> produced_at;

  const Eigen::VectorXd& at(int j) const;
  // Throws std::logic_error if any entry is newer than the stamp.
  void assert_causal() const;
};

struct ObjectiveLedger {
  std::vector<std::vector<double>> per_subsystem;  // Φ_k^{i,*} by k
  std::vector<double> collective;                  // Φ_k^*
  // Objective of the window problem alone, without the carried constant.
  std::vector<std::vector<double>> increments;
};

struct InstantResult {
  int k = 0;
  Eigen::VectorXd estimate;  // x̂_{k|k}, global
  std::vector<LocalSolution> solutions;
  std::vector<std::optional<ArrivalPrior>> arrivals;
};

struct CoordinatorOptions {
  VariantConfig variant;
  std::vector<ConstraintSet> constraints;  // per subsystem; empty = none
  bool parallel = false;
  SolveOptions solve;
};

// Per-subsystem estimator holding its arrival-cost chain and last solution.
class LocalEstimator;

class Coordinator {
 public:
  Coordinator(const PartitionedLinearModel& model, Eigen::VectorXd x_bar0,
              CoordinatorOptions options);
  Coordinator(const NonlinearSystem& system, NonlinearWeights weights, Eigen::VectorXd x_bar0,
              CoordinatorOptions options);
  ~Coordinator();
  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  // Processes y_k for the next instant k. On failure the state is unchanged
  // and a SubsystemError names the failing estimator.
  InstantResult advance(const Eigen::VectorXd& y_k);

  int instant() const { return static_cast<int>(ys_.size()); }
  const ObjectiveLedger& ledger() const { return ledger_; }
  // Snapshot that instant `instant()` would read.
  ExchangeSnapshot snapshot() const;
  // Snapshots read at each processed instant (kept when recording is on).
  const std::vector<ExchangeSnapshot>& snapshot_history() const { return history_; }
  void set_record_snapshots(bool on) { record_snapshots_ = on; }
  const std::vector<Eigen::VectorXd>& measurements() const { return ys_; }
  const CoordinatorOptions& options() const { return options_; }
  const Partition& partition() const;
  const ArrivalCostState* arrival_chain(int i) const;

 private:
  void init(Eigen::VectorXd x_bar0);

  std::unique_ptr<PartitionedLinearModel> linear_;
  std::unique_ptr<DerivedSelectors> selectors_;
  std::unique_ptr<NonlinearSystem> nonlinear_;
  NonlinearWeights weights_;
  CoordinatorOptions options_;
  Eigen::VectorXd x_bar0_;
  std::vector<Eigen::VectorXd> ys_;
  ExchangeSnapshot table_;
  std::vector<std::unique_ptr<LocalEstimator>> estimators_;
  ObjectiveLedger ledger_;
  std::vector<ExchangeSnapshot> history_;
  bool record_snapshots_ = false;
};

struct PlantTrace {
  std::vector<Eigen::VectorXd> states;        // x_0..x_{T−1}
  std::vector<Eigen::VectorXd> measurements;  // y_0..y_{T−1}
};

struct EstimateRecord {
  std::vector<Eigen::VectorXd> estimates;  // x̂_{k|k}
  std::vector<Eigen::VectorXd> truth;
  std::vector<InstantResult> instants;
  ObjectiveLedger ledger;
  int completed = 0;
  std::string error;  // empty on success
  int error_subsystem = -1;
};

// Feeds the first T measurements of `trace`; stops at the first failure and
// returns the partial record annotated with the error.
EstimateRecord run_horizon(Coordinator& coordinator, const PlantTrace& trace, int T);

}  // namespace dmhe
