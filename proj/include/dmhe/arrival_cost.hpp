#pragma once

#include <vector>

#include <Eigen/Dense>

#include "dmhe/system_model.hpp"

namespace dmhe {

// Per-subsystem arrival-cost recursion. The internal chain carries (P̆, x̆)
// through measurement updates (P̌, x̌); the read-out (P, x̄) is branched off
// P̆ and defines ‖x̂ − x̄‖²_{P⁻¹}.
struct ArrivalCostState {
  int i = 0;
  int k = 0;
  Eigen::MatrixXd P_breve;
  Eigen::VectorXd x_breve;
  Eigen::MatrixXd P_check;  // empty until output_update at instant k
  Eigen::VectorXd x_check;
  Eigen::MatrixXd P_bar;  // empty until the first read-out
  Eigen::VectorXd x_bar;

  bool has_check() const { return P_check.size() > 0; }
};

struct ArrivalPrior {
  Eigen::MatrixXd P;
  Eigen::VectorXd x_bar;
};

// Measurement rows consumed by a subsystem: all outputs or its own only.
std::vector<int> measurement_rows(const Partition& p, int i, bool use_neighbor_measurements);
Eigen::VectorXd select_rows(const Eigen::VectorXd& v, const std::vector<int>& rows);
Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<int>& rows);
Eigen::MatrixXd select_block(const Eigen::MatrixXd& m, const std::vector<int>& rows);

// Generic forms. `offset` collects the known neighbor contribution to the
// measurement (init/output update) or to the next state (time update/read-out).
ArrivalCostState init_arrival(int i, const Eigen::MatrixXd& P0, const Eigen::VectorXd& x_bar0,
                              const Eigen::VectorXd& y0, const Eigen::MatrixXd& C_col_i,
                              const Eigen::VectorXd& offset, const Eigen::MatrixXd& R);
ArrivalCostState output_update(const ArrivalCostState& s, const Eigen::VectorXd& y_next,
                               const Eigen::MatrixXd& H, const Eigen::VectorXd& offset,
                               const Eigen::MatrixXd& R);
ArrivalCostState time_update(const ArrivalCostState& s, const Eigen::MatrixXd& A_ii,
                             const Eigen::VectorXd& offset, const Eigen::MatrixXd& Q_i);
ArrivalPrior arrival_readout(const ArrivalCostState& s, const Eigen::MatrixXd& A_ii,
                             const Eigen::VectorXd& offset, const Eigen::MatrixXd& Q_i);

// Linear-model forms; `x_tilde` is a global state vector whose block i is
// ignored, `rows` selects the measurement rows in use.
ArrivalCostState init_arrival(const PartitionedLinearModel& model, const DerivedSelectors& sel,
                              int i, const Eigen::VectorXd& y0, const Eigen::VectorXd& x_tilde0,
                              const Eigen::VectorXd& x_bar0_i, const std::vector<int>& rows);
ArrivalCostState output_update(const PartitionedLinearModel& model, const DerivedSelectors& sel,
                               const ArrivalCostState& s, const Eigen::VectorXd& y_next,
                               const Eigen::VectorXd& x_tilde, const std::vector<int>& rows);
ArrivalCostState time_update(const PartitionedLinearModel& model, const ArrivalCostState& s,
                             const Eigen::VectorXd& x_tilde);
ArrivalPrior arrival_readout(const PartitionedLinearModel& model, const ArrivalCostState& s,
                             const Eigen::VectorXd& x_tilde);

// Successively linearized forms. Centers propagate through f and h; weights
// use the Jacobians at `lin_point` (a global state at instant j = s.k).
struct NonlinearWeights {
  std::vector<Eigen::MatrixXd> Q;  // per subsystem
  Eigen::MatrixXd R;               // full output weight
  std::vector<Eigen::MatrixXd> P0;
};

ArrivalCostState init_arrival_nonlinear(const NonlinearSystem& sys, const NonlinearWeights& w,
                                        int i, const Eigen::VectorXd& y0,
                                        const Eigen::VectorXd& x_tilde0,
                                        const Eigen::VectorXd& x_bar0_i,
                                        const Eigen::VectorXd& lin_point,
                                        const std::vector<int>& rows);
ArrivalCostState output_update_nonlinear(const NonlinearSystem& sys, const NonlinearWeights& w,
                                         const ArrivalCostState& s, const Eigen::VectorXd& y_next,
                                         const Eigen::VectorXd& x_tilde,
                                         const Eigen::VectorXd& lin_point,
                                         const std::vector<int>& rows);
ArrivalCostState time_update_nonlinear(const NonlinearSystem& sys, const NonlinearWeights& w,
                                       const ArrivalCostState& s, const Eigen::VectorXd& x_tilde,
                                       const Eigen::VectorXd& lin_point);
ArrivalPrior arrival_readout_nonlinear(const NonlinearSystem& sys, const NonlinearWeights& w,
                                       const ArrivalCostState& s, const Eigen::VectorXd& x_tilde,
                                       const Eigen::VectorXd& lin_point);

// One chain step (output update with y_{k+1}, then time update).
ArrivalCostState update_for_nonlinear(const NonlinearSystem& sys, const NonlinearWeights& w,
                                      const ArrivalCostState& s, const Eigen::VectorXd& y_next,
                                      const Eigen::VectorXd& x_tilde,
                                      const Eigen::VectorXd& lin_point,
                                      const std::vector<int>& rows);

// Throws NumericalError when the smallest eigenvalue falls below
// 1e-12·trace or the matrix is not symmetric to 1e-10 relative.
void check_covariance(const Eigen::MatrixXd& P, const char* what);

}  // namespace dmhe
