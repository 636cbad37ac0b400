#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace dmhe {

// Index bookkeeping for n subsystems stacked into global state/output vectors.
class Partition {
 public:
  Partition() = default;
  // `interaction_graph[i]` lists the l ≠ i whose states enter f_i; it may be
  // empty (no coupling) but must have n entries when non-empty.
  Partition(std::vector<int> state_dims, std::vector<int> output_dims,
            std::vector<std::vector<int>> interaction_graph = {});

  int n() const { return static_cast<int>(state_dims_.size()); }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int state_dim(int i) const { return state_dims_.at(i); }
  int output_dim(int i) const { return output_dims_.at(i); }
  int state_offset(int i) const { return state_offsets_.at(i); }
  int output_offset(int i) const { return output_offsets_.at(i); }
  const std::vector<int>& state_dims() const { return state_dims_; }
  const std::vector<int>& output_dims() const { return output_dims_; }
  const std::vector<int>& neighbors(int i) const { return graph_.at(i); }
  const std::vector<std::vector<int>>& interaction_graph() const { return graph_; }
  // Length of X^i, the packed neighbor states in graph order.
  int neighbor_dim(int i) const;

  Eigen::VectorXd local_state(const Eigen::VectorXd& x, int i) const;
  Eigen::VectorXd local_output(const Eigen::VectorXd& y, int i) const;
  Eigen::VectorXd pack_neighbors(const Eigen::VectorXd& x, int i) const;
  void set_local_state(Eigen::VectorXd& x, int i, const Eigen::VectorXd& xi) const;
  // Global output indices owned by subsystem i.
  std::vector<int> output_rows(int i) const;

 private:
  std::vector<int> state_dims_, output_dims_;
  std::vector<int> state_offsets_, output_offsets_;
  std::vector<std::vector<int>> graph_;
  int nx_ = 0, ny_ = 0;
};

using BlockGrid = std::vector<std::vector<Eigen::MatrixXd>>;

// x_{k+1} = A x_k + w_k, y_k = C x_k + v_k with A = [A_il], C = diag(C_ii).
class PartitionedLinearModel {
 public:
  PartitionedLinearModel() = default;
  // Missing (empty) off-diagonal A blocks are treated as zero. The interaction
  // graph is derived from the nonzero off-diagonal blocks.
  PartitionedLinearModel(BlockGrid A_blocks, std::vector<Eigen::MatrixXd> C_blocks,
                         std::vector<Eigen::MatrixXd> Q_blocks,
                         std::vector<Eigen::MatrixXd> R_blocks,
                         std::vector<Eigen::MatrixXd> P0_blocks);

  const Partition& partition() const { return partition_; }
  int n() const { return partition_.n(); }
  const Eigen::MatrixXd& A_block(int i, int l) const { return A_blocks_.at(i).at(l); }
  const Eigen::MatrixXd& C_block(int i) const { return C_blocks_.at(i); }
  const Eigen::MatrixXd& Q_block(int i) const { return Q_blocks_.at(i); }
  const Eigen::MatrixXd& R_block(int i) const { return R_blocks_.at(i); }
  const Eigen::MatrixXd& P0_block(int i) const { return P0_blocks_.at(i); }
  const BlockGrid& A_blocks() const { return A_blocks_; }
  const std::vector<Eigen::MatrixXd>& C_blocks() const { return C_blocks_; }
  const std::vector<Eigen::MatrixXd>& Q_blocks() const { return Q_blocks_; }
  const std::vector<Eigen::MatrixXd>& R_blocks() const { return R_blocks_; }
  const std::vector<Eigen::MatrixXd>& P0_blocks() const { return P0_blocks_; }

  const Eigen::MatrixXd& A() const { return A_; }
  const Eigen::MatrixXd& C() const { return C_; }
  const Eigen::MatrixXd& R() const { return R_; }
  Eigen::MatrixXd Q() const;
  Eigen::MatrixXd P0() const;

  // Same dynamics with every subsystem's weights replaced.
  PartitionedLinearModel with_weights(std::vector<Eigen::MatrixXd> Q_blocks,
                                      std::vector<Eigen::MatrixXd> R_blocks,
                                      std::vector<Eigen::MatrixXd> P0_blocks) const;

 private:
  Partition partition_;
  BlockGrid A_blocks_;
  std::vector<Eigen::MatrixXd> C_blocks_, Q_blocks_, R_blocks_, P0_blocks_;
  Eigen::MatrixXd A_, C_, R_;
};

struct GlobalMatrices {
  Eigen::MatrixXd A;
  Eigen::MatrixXd C;
};

GlobalMatrices assemble_global(const PartitionedLinearModel& model);

// Column-block and zeroing selectors shared by the estimator and the
// stability analysis.
struct DerivedSelectors {
  std::vector<Eigen::MatrixXd> A_col;    // A_{[:,i]}, n_x × n_{x^i}
  std::vector<Eigen::MatrixXd> C_col;    // C_{[:,i]}, n_y × n_{x^i}
  std::vector<Eigen::MatrixXd> A_tilde;  // A with column block i zeroed
  std::vector<Eigen::MatrixXd> C_tilde;  // C with block i zeroed
  Eigen::MatrixXd A_d;                   // block diagonal part of A
  Eigen::MatrixXd A_r;                   // A − A_d

  const Eigen::MatrixXd& A_star(int i) const { return A_col.at(i); }
  const Eigen::MatrixXd& C_star(int i) const { return C_col.at(i); }

  static DerivedSelectors compute(const PartitionedLinearModel& model);
};

// f_i(k, x^i, X^i) → x^i_{k+1}; X^i packs neighbor states in graph order.
using DynamicsFn =
    std::function<Eigen::VectorXd(int k, const Eigen::VectorXd& xi, const Eigen::VectorXd& Xi)>;
// Fills ∂f_i/∂x^i and ∂f_i/∂X^i.
using DynamicsJacobianFn =
    std::function<void(int k, const Eigen::VectorXd& xi, const Eigen::VectorXd& Xi,
                       Eigen::MatrixXd& d_xi, Eigen::MatrixXd& d_Xi)>;
using OutputFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& xi)>;
using OutputJacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd& xi)>;

struct NonlinearSubsystemModel {
  DynamicsFn f;
  OutputFn h;
  DynamicsJacobianFn jac_f;  // optional
  OutputJacobianFn jac_h;    // optional
};

class NonlinearSystem {
 public:
  NonlinearSystem() = default;
  // Probes every callable at 10 pseudo-random points around `nominal`
  // (zero when empty) to validate output dimensions and determinism.
  NonlinearSystem(Partition partition, std::vector<NonlinearSubsystemModel> subsystems,
                  const Eigen::VectorXd& nominal = {});

  const Partition& partition() const { return partition_; }
  const NonlinearSubsystemModel& subsystem(int i) const { return subsystems_.at(i); }

  Eigen::VectorXd f_local(int k, int i, const Eigen::VectorXd& x) const;
  Eigen::VectorXd f(int k, const Eigen::VectorXd& x) const;
  Eigen::VectorXd h_local(int i, const Eigen::VectorXd& xi) const;
  Eigen::VectorXd h(const Eigen::VectorXd& x) const;

  // Jacobians of f_i with respect to x^i and X^i at the global state x.
  void jacobian_f(int k, int i, const Eigen::VectorXd& x, Eigen::MatrixXd& d_xi,
                  Eigen::MatrixXd& d_Xi) const;
  Eigen::MatrixXd jacobian_h(int i, const Eigen::VectorXd& xi) const;

  // Drops analytic providers so every Jacobian comes from finite differences.
  NonlinearSystem without_analytic_jacobians() const;

 private:
  Partition partition_;
  std::vector<NonlinearSubsystemModel> subsystems_;
};

struct Linearization {
  Eigen::MatrixXd A;
  Eigen::MatrixXd C;
};

// A_k = ∂f/∂x and C_k = ∂h/∂x at x; A_k blocks outside the interaction graph
// are exactly zero and C_k is block diagonal.
Linearization linearize(const NonlinearSystem& system, int k, const Eigen::VectorXd& x);

// Central differences with per-coordinate step max(floor, rel·|x_j|).
// Throws EvaluationError carrying the coordinate on non-finite output.
Eigen::MatrixXd central_difference_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& fn, const Eigen::VectorXd& x,
    double rel = 1e-6, double floor = 1e-6);

// Wraps a linear model as a nonlinear one with exact Jacobians.
NonlinearSystem as_nonlinear(const PartitionedLinearModel& model);

}  // namespace dmhe
