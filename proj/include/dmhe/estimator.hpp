#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dmhe/arrival_cost.hpp"
#include "dmhe/qp.hpp"
#include "dmhe/system_model.hpp"

namespace dmhe {

// Box bounds on a subsystem's states (𝕏^i) and disturbances (𝕎^i). Empty
// vectors mean unbounded.
struct ConstraintSet {
  Eigen::VectorXd x_lower, x_upper;
  Eigen::VectorXd w_lower, w_upper;
  // Unset: the linear solver bounds only the newest state, the nonlinear
  // solver bounds every window state and disturbance.
  std::optional<bool> constrain_all_window;

  bool has_state_bounds() const;
  bool has_disturbance_bounds() const;
  void validate(int dim) const;
};

// Data seen by estimator i at instant k over the window s = max(0, k−N)..k.
struct EstimationWindow {
  int i = 0;
  int k = 0;
  int N = 1;
  std::vector<Eigen::VectorXd> ys;       // y_s..y_k, full output vectors
  std::vector<Eigen::VectorXd> x_tilde;  // global x̃_j for j = s..max(s, k−1)
  std::optional<ArrivalPrior> arrival;   // weight on x̂_s
  std::vector<int> rows;                 // measurement rows in use

  int start() const { return k > N ? k - N : 0; }
  int length() const { return k - start() + 1; }
  // Neighbor estimate used for transitions out of instant j.
  const Eigen::VectorXd& x_tilde_at(int j) const;
  void validate(const Partition& p) const;
};

struct LocalSolution {
  int i = 0;
  int k = 0;
  int start = 0;
  std::vector<Eigen::VectorXd> x;  // x̂_s..x̂_k
  std::vector<Eigen::VectorXd> w;  // ŵ_s..ŵ_{k−1}
  std::vector<Eigen::VectorXd> v;  // v̂_s (direct) then v̂_{s+1..k} (predicted)
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  int active_set_changes = 0;
  bool constraints_touched = false;
  std::vector<double> objective_history;
};

struct SolveOptions {
  QpOptions qp;
  int max_iterations = 30;
  double relative_tolerance = 1e-10;
  double armijo = 1e-4;
  int max_step_doublings = 6;
  // Initial iterate over the window; empty → propagate the arrival center.
  std::vector<Eigen::VectorXd> warm_start;
  // Optional equality pins per window slot (empty optional = free).
  std::vector<std::optional<Eigen::VectorXd>> pins;
};

// Subsystem-i view of the dynamics and outputs with neighbors held at x̃.
class LocalDynamics {
 public:
  virtual ~LocalDynamics() = default;
  virtual int state_dim() const = 0;
  // Block i of a global state vector.
  virtual Eigen::VectorXd own_state(const Eigen::VectorXd& x) const = 0;
  // f_i(x^i, X̃_j) and its Jacobian in x^i.
  virtual Eigen::VectorXd next(int j, const Eigen::VectorXd& xi, const Eigen::VectorXd& x_tilde,
                               Eigen::MatrixXd* jac) const = 0;
  // Selected rows of h at the composite (x^i, x̃), and the Jacobian in x^i.
  virtual Eigen::VectorXd output_direct(int j, const Eigen::VectorXd& xi,
                                        const Eigen::VectorXd& x_tilde,
                                        const std::vector<int>& rows,
                                        Eigen::MatrixXd* jac) const = 0;
  // Selected rows of h(f(·)) at the composite: the one-step-ahead output.
  virtual Eigen::VectorXd output_predicted(int j, const Eigen::VectorXd& xi,
                                           const Eigen::VectorXd& x_tilde,
                                           const std::vector<int>& rows,
                                           Eigen::MatrixXd* jac) const = 0;
  virtual bool is_affine() const = 0;
};

class LinearLocalDynamics final : public LocalDynamics {
 public:
  LinearLocalDynamics(const PartitionedLinearModel& model, const DerivedSelectors& sel, int i);
  int state_dim() const override;
  Eigen::VectorXd own_state(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd next(int j, const Eigen::VectorXd& xi, const Eigen::VectorXd& x_tilde,
                       Eigen::MatrixXd* jac) const override;
  Eigen::VectorXd output_direct(int j, const Eigen::VectorXd& xi, const Eigen::VectorXd& x_tilde,
                                const std::vector<int>& rows, Eigen::MatrixXd* jac) const override;
  Eigen::VectorXd output_predicted(int j, const Eigen::VectorXd& xi, const Eigen::VectorXd& x_tilde,
                                   const std::vector<int>& rows,
                                   Eigen::MatrixXd* jac) const override;
  bool is_affine() const override { return true; }

 private:
  const PartitionedLinearModel& model_;
  const DerivedSelectors& sel_;
  int i_;
  Eigen::MatrixXd CA_i_;
};

class NonlinearLocalDynamics final : public LocalDynamics {
 public:
  NonlinearLocalDynamics(const NonlinearSystem& sys, int i);
  int state_dim() const override;
  Eigen::VectorXd own_state(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd next(int j, const Eigen::VectorXd& xi, const Eigen::VectorXd& x_tilde,
                       Eigen::MatrixXd* jac) const override;
  Eigen::VectorXd output_direct(int j, const Eigen::VectorXd& xi, const Eigen::VectorXd& x_tilde,
                                const std::vector<int>& rows, Eigen::MatrixXd* jac) const override;
  Eigen::VectorXd output_predicted(int j, const Eigen::VectorXd& xi, const Eigen::VectorXd& x_tilde,
                                   const std::vector<int>& rows,
                                   Eigen::MatrixXd* jac) const override;
  bool is_affine() const override { return false; }

 private:
  Eigen::VectorXd composite(const Eigen::VectorXd& xi, const Eigen::VectorXd& x_tilde) const;
  const NonlinearSystem& sys_;
  int i_;
};

struct WindowWeights {
  Eigen::MatrixXd Q;  // Q_i
  Eigen::MatrixXd R;  // full output weight; rows are selected per window
};

// Constrained window solve with the dynamics' own linearization: a single
// QP for affine dynamics, Gauss–Newton with Armijo backtracking otherwise.
LocalSolution solve_local_window(const LocalDynamics& dyn, const EstimationWindow& window,
                                 const WindowWeights& weights, const ConstraintSet& constraints,
                                 bool constrain_all_default, const SolveOptions& options = {});

LocalSolution solve_local_mhe_linear(const EstimationWindow& window,
                                     const PartitionedLinearModel& model,
                                     const DerivedSelectors& sel, const ConstraintSet& constraints,
                                     const SolveOptions& options = {});

LocalSolution solve_local_mhe_nonlinear(const EstimationWindow& window, const NonlinearSystem& sys,
                                        const NonlinearWeights& weights,
                                        const ConstraintSet& constraints,
                                        const SolveOptions& options = {});

// Sequences and objective of the window problem at a given state sequence.
LocalSolution evaluate_window(const LocalDynamics& dyn, const EstimationWindow& window,
                              const WindowWeights& weights,
                              const std::vector<Eigen::VectorXd>& states);

// Σ‖ŵ‖²_{Q⁻¹} + Σ‖v̂‖²_{R⁻¹} + arrival term, from the stored sequences.
double recompute_objective(const LocalSolution& sol, const EstimationWindow& window,
                           const WindowWeights& weights);

enum class FieMode { kCentralized, kDistributed };
enum class FieAssembly { kStacked, kAccumulated };

struct FieOptions {
  FieMode mode = FieMode::kCentralized;
  int subsystem = 0;
  Eigen::VectorXd x_bar0;  // global prior center
  // Global neighbor estimates x̃_j, j = 0..k−1 (distributed mode).
  std::vector<Eigen::VectorXd> x_tilde;
  // Instants whose output enters directly through C x̂_j rather than through
  // the one-step prediction (distributed mode; instant 0 is always direct).
  std::vector<int> direct_output_instants;
  bool use_neighbor_measurements = true;
  FieAssembly assembly = FieAssembly::kStacked;
};

// Dense full-information least-squares estimate over instants 0..k. Returns
// global states (centralized) or subsystem states (distributed).
std::vector<Eigen::VectorXd> solve_fie_oracle(const std::vector<Eigen::VectorXd>& ys,
                                              const PartitionedLinearModel& model,
                                              const FieOptions& options);

}  // namespace dmhe
