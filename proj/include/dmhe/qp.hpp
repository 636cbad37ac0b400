#pragma once

#include <vector>

#include <Eigen/Dense>

namespace dmhe {

// minimize ½xᵀHx + gᵀx subject to lower ≤ Gx ≤ upper (rows with
// lower == upper are equalities; infinite bounds are ignored).
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::MatrixXd G;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

struct QpOptions {
  int max_active_set_changes = 200;
  double feasibility_tol = 1e-9;
};

struct QpResult {
  Eigen::VectorXd x;
  // Signed multipliers per constraint row: positive on an active lower bound,
  // negative on an active upper bound, zero when inactive.
  Eigen::VectorXd multipliers;
  std::vector<int> active;
  double kkt_residual = 0.0;
  int active_set_changes = 0;
  // True when any inequality blocked a step or was active at the start.
  bool constraints_touched = false;
};

// Primal active-set method from a feasible starting point. H must be positive
// definite on the null space of every working set encountered.
QpResult solve_qp(const QpProblem& problem, const Eigen::VectorXd& x0,
                  const QpOptions& options = {});

// Relative stationarity/feasibility/sign violation of a candidate solution.
double qp_kkt_residual(const QpProblem& problem, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& multipliers);

}  // namespace dmhe
