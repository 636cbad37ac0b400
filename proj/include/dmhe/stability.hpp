#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dmhe/coordinator.hpp"
#include "dmhe/estimator.hpp"
#include "dmhe/system_model.hpp"

namespace dmhe {

// Stacked maps of the noise-free error recursion over a window of length N:
// V = O e_{k−N|k} + Γ E_{k−1} and E_k = M1 e_{k−N|k} + M2 E_{k−1}.
struct CollectiveMatrices {
  Eigen::MatrixXd O;
  Eigen::MatrixXd Gamma;
  Eigen::MatrixXd M1;
  Eigen::MatrixXd M2;
  Eigen::MatrixXd C_bold;   // diag(C, …, C), n copies
  Eigen::MatrixXd A_star;   // diag(A_1^*, …, A_n^*)
  Eigen::MatrixXd A_tilde;  // col(Ã_1, …, Ã_n)
  int N = 1;
  int n = 1;
  int nx = 0;
  int ny = 0;
};

CollectiveMatrices build_collective(const PartitionedLinearModel& model,
                                    const DerivedSelectors& sel, int N);

struct SpectralResult {
  double rho = 0.0;
  Eigen::MatrixXd M;
};

// M = M2 − M1(OᵀO)⁻¹OᵀΓ and its spectral radius.
SpectralResult error_matrix_rho(const CollectiveMatrices& cm);

struct TransitHessian {
  Eigen::MatrixXd H;
  Eigen::MatrixXd C4;
  Eigen::MatrixXd Htilde;
  Eigen::MatrixXd C1, C2, C3;
};

// H = C4ᵀ H̃⁻¹ C4 for the window states k−N+1..k of subsystem i, where
// `P_entry` weights the first of them.
TransitHessian build_transit_hessian(const PartitionedLinearModel& model,
                                     const DerivedSelectors& sel, const Eigen::MatrixXd& P_entry,
                                     int N, int i);

// Weight on x̂_{k−N+1} left after minimizing the arrival term, the direct
// output at k−N, the predicted output at k−N+1 and ŵ_{k−N} over x̂_{k−N}.
Eigen::MatrixXd transit_entry_weight(const PartitionedLinearModel& model,
                                     const DerivedSelectors& sel, const Eigen::MatrixXd& P_arrival,
                                     int i);

// Block-diagonal comparison matrices W^l, one per subsystem, from the
// arrival weights P_{l,k−N}.
std::vector<Eigen::MatrixXd> build_W(const PartitionedLinearModel& model,
                                     const DerivedSelectors& sel,
                                     const std::vector<Eigen::MatrixXd>& P_arrival, int N);

struct Assumption1Verdict {
  bool holds = false;
  double min_eigenvalue = 0.0;  // of H − W
  double tolerance = 0.0;
};

Assumption1Verdict check_assumption1(const Eigen::MatrixXd& W, const Eigen::MatrixXd& H);

// Window objective minimized over x̂_{k−N} with x̂_{k−N+1..k} pinned to z.
// `window` must span N+1 instants.
double transit_cost_eval(const std::vector<Eigen::VectorXd>& z, const EstimationWindow& window,
                         const PartitionedLinearModel& model, const DerivedSelectors& sel,
                         const ConstraintSet& constraints, bool constrained);

struct AssumptionSample {
  int k = 0;
  int i = 0;
  double min_eigenvalue = 0.0;
  bool holds = false;
};

struct StabilityReport {
  int N = 1;
  double rho = 0.0;
  bool rho_available = true;
  std::string rho_error;
  std::vector<AssumptionSample> prior_samples;
  std::vector<AssumptionSample> samples;  // along a recorded run

  bool assumption1_holds_at_prior() const;
  double prior_margin() const;
  bool assumption1_holds() const;
  double worst_margin() const;
};

// Evaluates Assumption 1 at every windowed instant of a recorded run, using
// the arrival weights the estimators actually used.
std::vector<AssumptionSample> assess_assumption1(const PartitionedLinearModel& model,
                                                 const DerivedSelectors& sel, int N,
                                                 const EstimateRecord& record);

// Assumption 1 with every subsystem still at its initial weight P0, i.e. at
// the first windowed instant.
std::vector<AssumptionSample> assess_assumption1_prior(const PartitionedLinearModel& model,
                                                       const DerivedSelectors& sel, int N);

StabilityReport stability_report(const PartitionedLinearModel& model, int N,
                                 const EstimateRecord* record);

std::string format_stability_report(const StabilityReport& report);

}  // namespace dmhe
