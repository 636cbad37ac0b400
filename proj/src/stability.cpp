#include "dmhe/stability.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "dmhe/arrival_cost.hpp"
#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"

namespace dmhe {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd matrix_power(const MatrixXd& a, int p) {
  MatrixXd out = MatrixXd::Identity(a.rows(), a.cols());
  for (int q = 0; q < p; ++q) out = out * a;
  return out;
}

}  // namespace

CollectiveMatrices build_collective(const PartitionedLinearModel& model,
                                    const DerivedSelectors& sel, int N) {
  if (N < 1) throw std::invalid_argument("build_collective: N must be >= 1");
  const Partition& p = model.partition();
  CollectiveMatrices cm;
  cm.N = N;
  cm.n = p.n();
  cm.nx = p.nx();
  cm.ny = p.ny();
  const int n = cm.n, nx = cm.nx, ny = cm.ny;

  cm.C_bold = MatrixXd::Zero(n * ny, n * nx);
  cm.A_star = MatrixXd::Zero(n * nx, nx);
  cm.A_tilde = MatrixXd::Zero(n * nx, nx);
  for (int i = 0; i < n; ++i) {
    cm.C_bold.block(i * ny, i * nx, ny, nx) = model.C();
    cm.A_star.block(i * nx, p.state_offset(i), nx, p.state_dim(i)) = sel.A_col[i];
    cm.A_tilde.block(i * nx, 0, nx, nx) = sel.A_tilde[i];
  }

  const MatrixXd CAs = cm.C_bold * cm.A_star;
  const MatrixXd CAt = cm.C_bold * cm.A_tilde;
  std::vector<MatrixXd> Ad_pow(N + 1);
  for (int r = 0; r <= N; ++r) Ad_pow[r] = matrix_power(sel.A_d, r);

  const int vr = n * ny;
  cm.O.resize(N * vr, nx);
  cm.Gamma = MatrixXd::Zero(N * vr, N * nx);
  cm.M1.resize(N * nx, nx);
  cm.M2 = MatrixXd::Zero(N * nx, N * nx);
  for (int r = 0; r < N; ++r) {
    cm.O.block(r * vr, 0, vr, nx) = CAs * Ad_pow[r];
    cm.M1.block(r * nx, 0, nx, nx) = Ad_pow[r + 1];
    for (int c = 0; c <= r; ++c) {
      if (c == r) {
        cm.Gamma.block(r * vr, c * nx, vr, nx) = CAt;
        cm.M2.block(r * nx, c * nx, nx, nx) = sel.A_r;
      } else {
        cm.Gamma.block(r * vr, c * nx, vr, nx) = CAs * Ad_pow[r - c - 1] * sel.A_r;
        cm.M2.block(r * nx, c * nx, nx, nx) = Ad_pow[r - c] * sel.A_r;
      }
    }
  }
  return cm;
}

SpectralResult error_matrix_rho(const CollectiveMatrices& cm) {
  const MatrixXd OtO = symmetrize(cm.O.transpose() * cm.O);
  const double cond = spd_condition(OtO);
  if (!(cond <= kMaxCondition)) {
    throw RankError(fmt::format(
        "error_matrix_rho: OᵀO is singular or ill-conditioned (condition {:.3g})", cond));
  }
  const Eigen::LLT<MatrixXd> llt(OtO);
  SpectralResult out;
  out.M = cm.M2 - cm.M1 * llt.solve(cm.O.transpose() * cm.Gamma);
  if (out.M.size() == 0) return out;
  Eigen::EigenSolver<MatrixXd> es(out.M, false);
  if (es.info() != Eigen::Success) {
    throw NumericalError("error_matrix_rho: eigensolver failed");
  }
  out.rho = es.eigenvalues().cwiseAbs().maxCoeff();
  return out;
}

MatrixXd transit_entry_weight(const PartitionedLinearModel& model, const DerivedSelectors& sel,
                              const MatrixXd& P_arrival, int i) {
  const int d = model.partition().state_dim(i);
  const int ny = model.partition().ny();
  require_shape(P_arrival, d, d, "transit_entry_weight: P");
  const VectorXd zx = VectorXd::Zero(d), zy = VectorXd::Zero(ny);
  ArrivalCostState s = init_arrival(i, P_arrival, zx, zy, sel.C_col[i], zy, model.R());
  s = output_update(s, zy, model.C() * sel.A_col[i], zy, model.R());
  s = time_update(s, model.A_block(i, i), zx, model.Q_block(i));
  return s.P_breve;
}

TransitHessian build_transit_hessian(const PartitionedLinearModel& model,
                                     const DerivedSelectors& sel, const MatrixXd& P_entry, int N,
                                     int i) {
  if (N < 1) throw std::invalid_argument("build_transit_hessian: N must be >= 1");
  const int d = model.partition().state_dim(i);
  const int ny = model.partition().ny();
  require_spd(P_entry, "build_transit_hessian: P");
  const MatrixXd& Aii = model.A_block(i, i);
  const MatrixXd CAs = model.C() * sel.A_col[i];

  TransitHessian t;
  t.C1 = MatrixXd::Zero(d, N * d);
  t.C1.leftCols(d).setIdentity();
  t.C2 = MatrixXd::Zero((N - 1) * d, N * d);
  t.C3 = MatrixXd::Zero((N - 1) * ny, N * d);
  for (int r = 0; r + 1 < N; ++r) {
    t.C2.block(r * d, r * d, d, d) = -Aii;
    t.C2.block(r * d, (r + 1) * d, d, d).setIdentity();
    t.C3.block(r * ny, r * d, ny, d) = CAs;
  }
  t.C4.resize(t.C1.rows() + t.C2.rows() + t.C3.rows(), N * d);
  t.C4 << t.C1, t.C2, t.C3;

  std::vector<MatrixXd> blocks{P_entry};
  for (int r = 0; r + 1 < N; ++r) blocks.push_back(model.Q_block(i));
  for (int r = 0; r + 1 < N; ++r) blocks.push_back(model.R());
  t.Htilde = block_diagonal(blocks);

  std::vector<MatrixXd> inv_blocks{spd_inverse(P_entry, "P")};
  const MatrixXd Qi = spd_inverse(model.Q_block(i), "Q");
  const MatrixXd Ri = spd_inverse(model.R(), "R");
  for (int r = 0; r + 1 < N; ++r) inv_blocks.push_back(Qi);
  for (int r = 0; r + 1 < N; ++r) inv_blocks.push_back(Ri);
  t.H = symmetrize(t.C4.transpose() * block_diagonal(inv_blocks) * t.C4);
  return t;
}

std::vector<MatrixXd> build_W(const PartitionedLinearModel& model, const DerivedSelectors& sel,
                              const std::vector<MatrixXd>& P_arrival, int N) {
  if (N < 1) throw std::invalid_argument("build_W: N must be >= 1");
  const Partition& p = model.partition();
  const int n = p.n();
  if (static_cast<int>(P_arrival.size()) != n) {
    throw std::invalid_argument("build_W: one arrival weight per subsystem");
  }
  const MatrixXd Ri = spd_inverse(model.R(), "R");
  std::vector<MatrixXd> Qi(n);
  for (int i = 0; i < n; ++i) Qi[i] = spd_inverse(model.Q_block(i), "Q");

  std::vector<MatrixXd> W(n);
  for (int l = 0; l < n; ++l) {
    const int d = p.state_dim(l);
    MatrixXd S = MatrixXd::Zero(d, d);
    for (int i = 0; i < n; ++i) {
      if (i != l) {
        const MatrixXd& Ail = model.A_block(i, l);
        S += Ail.transpose() * Qi[i] * Ail;
      }
      const MatrixXd CAt = model.C() * sel.A_tilde[i].middleCols(p.state_offset(l), d);
      S += CAt.transpose() * Ri * CAt;
    }
    S *= static_cast<double>(n);
    require_shape(P_arrival[l], d, d, "build_W: P");
    std::vector<MatrixXd> blocks(N, S);
    blocks[0] = spd_inverse(P_arrival[l], "P") + sel.C_col[l].transpose() * Ri * sel.C_col[l] + S;
    W[l] = symmetrize(block_diagonal(blocks));
  }
  return W;
}

Assumption1Verdict check_assumption1(const MatrixXd& W, const MatrixXd& H) {
  if (W.rows() != H.rows() || W.cols() != H.cols() || H.rows() != H.cols()) {
    throw std::invalid_argument(fmt::format("check_assumption1: W is {}x{} but H is {}x{}",
                                            W.rows(), W.cols(), H.rows(), H.cols()));
  }
  Assumption1Verdict v;
  if (H.size() == 0) {
    v.holds = true;
    return v;
  }
  const Eigen::SelfAdjointEigenSolver<MatrixXd> hs(symmetrize(H), Eigen::EigenvaluesOnly);
  const double h_norm = hs.eigenvalues().cwiseAbs().maxCoeff();
  v.min_eigenvalue = min_eigenvalue(symmetrize(H - W));
  v.tolerance = 1e-10 * h_norm;
  v.holds = v.min_eigenvalue >= -v.tolerance;
  return v;
}

double transit_cost_eval(const std::vector<VectorXd>& z, const EstimationWindow& window,
                         const PartitionedLinearModel& model, const DerivedSelectors& sel,
                         const ConstraintSet& constraints, bool constrained) {
  if (window.length() != window.N + 1) {
    throw std::invalid_argument("transit_cost_eval: the window must span N + 1 instants");
  }
  if (static_cast<int>(z.size()) != window.N) {
    throw std::invalid_argument(
        fmt::format("transit_cost_eval: expected {} pinned states, got {}", window.N, z.size()));
  }
  SolveOptions opt;
  opt.pins.assign(window.length(), std::nullopt);
  for (int t = 0; t < window.N; ++t) opt.pins[t + 1] = z[t];
  const ConstraintSet none;
  return solve_local_mhe_linear(window, model, sel, constrained ? constraints : none, opt)
      .objective;
}

namespace {

void assess_at(const PartitionedLinearModel& model, const DerivedSelectors& sel, int N, int k,
               const std::vector<MatrixXd>& P, std::vector<AssumptionSample>* out) {
  const std::vector<MatrixXd> W = build_W(model, sel, P, N);
  for (int i = 0; i < model.n(); ++i) {
    const MatrixXd entry = transit_entry_weight(model, sel, P[i], i);
    const TransitHessian th = build_transit_hessian(model, sel, entry, N, i);
    const Assumption1Verdict v = check_assumption1(W[i], th.H);
    out->push_back({k, i, v.min_eigenvalue, v.holds});
  }
}

double min_margin(const std::vector<AssumptionSample>& samples) {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) worst = std::min(worst, s.min_eigenvalue);
  return worst;
}

bool all_hold(const std::vector<AssumptionSample>& samples) {
  return std::all_of(samples.begin(), samples.end(),
                     [](const AssumptionSample& s) { return s.holds; });
}

}  // namespace

std::vector<AssumptionSample> assess_assumption1(const PartitionedLinearModel& model,
                                                 const DerivedSelectors& sel, int N,
                                                 const EstimateRecord& record) {
  const int n = model.n();
  std::vector<AssumptionSample> out;
  for (const InstantResult& inst : record.instants) {
    if (inst.k < N) continue;
    std::vector<MatrixXd> P(n);
    bool complete = true;
    for (int i = 0; i < n; ++i) {
      if (i >= static_cast<int>(inst.arrivals.size()) || !inst.arrivals[i]) {
        complete = false;
        break;
      }
      P[i] = inst.arrivals[i]->P;
    }
    if (!complete) continue;
    assess_at(model, sel, N, inst.k, P, &out);
  }
  return out;
}

std::vector<AssumptionSample> assess_assumption1_prior(const PartitionedLinearModel& model,
                                                       const DerivedSelectors& sel, int N) {
  std::vector<AssumptionSample> out;
  assess_at(model, sel, N, N, model.P0_blocks(), &out);
  return out;
}

StabilityReport stability_report(const PartitionedLinearModel& model, int N,
                                 const EstimateRecord* record) {
  const DerivedSelectors sel = DerivedSelectors::compute(model);
  StabilityReport report;
  report.N = N;
  try {
    report.rho = error_matrix_rho(build_collective(model, sel, N)).rho;
  } catch (const NumericalError& e) {
    report.rho_available = false;
    report.rho = std::numeric_limits<double>::quiet_NaN();
    report.rho_error = e.what();
  }
  report.prior_samples = assess_assumption1_prior(model, sel, N);
  if (record != nullptr) report.samples = assess_assumption1(model, sel, N, *record);
  return report;
}

bool StabilityReport::assumption1_holds() const { return all_hold(samples); }

double StabilityReport::worst_margin() const { return min_margin(samples); }

bool StabilityReport::assumption1_holds_at_prior() const { return all_hold(prior_samples); }

double StabilityReport::prior_margin() const { return min_margin(prior_samples); }

std::string format_stability_report(const StabilityReport& report) {
  std::ostringstream os;
  os << "N: " << report.N << "\n";
  if (report.rho_available) {
    os << "rho: " << fmt::format("{:.17g}", report.rho) << "\n";
    os << "rho_below_one: " << (report.rho < 1.0 ? "true" : "false") << "\n";
  } else {
    os << "rho: unavailable\n";
    os << "rho_error: \"" << report.rho_error << "\"\n";
  }
  os << "assumption1_prior_holds: " << (report.assumption1_holds_at_prior() ? "true" : "false")
     << "\n";
  os << "assumption1_prior_margin: " << fmt::format("{:.17g}", report.prior_margin()) << "\n";
  os << "assumption1_samples: " << report.samples.size() << "\n";
  if (!report.samples.empty()) {
    os << "assumption1_holds: " << (report.assumption1_holds() ? "true" : "false") << "\n";
    os << "assumption1_worst_margin: " << fmt::format("{:.17g}", report.worst_margin()) << "\n";
  }
  os << "margins:\n";
  for (const auto& s : report.samples) {
    os << fmt::format(
        "  - {{k: {}, subsystem: {}, min_eigenvalue: {:.17g}, "
        "holds: {}}}\n",
        s.k, s.i + 1, s.min_eigenvalue, s.holds ? "true" : "false");
  }
  return os.str();
}

}  // namespace dmhe
