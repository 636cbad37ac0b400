#include "dmhe/arrival_cost.hpp"

#include <sstream>

#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"
#include "dmhe/quad_fusion.hpp"

namespace dmhe {

std::vector<int> measurement_rows(const Partition& p, int i, bool use_neighbor_measurements) {
  if (!use_neighbor_measurements) return p.output_rows(i);
  std::vector<int> rows(p.ny());
  for (int r = 0; r < p.ny(); ++r) rows[r] = r;
  return rows;
}

Eigen::VectorXd select_rows(const Eigen::VectorXd& v, const std::vector<int>& rows) {
  Eigen::VectorXd out(rows.size());
  for (size_t r = 0; r < rows.size(); ++r) out(r) = v(rows[r]);
  return out;
}

Eigen::MatrixXd select_rows(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(rows.size(), m.cols());
  for (size_t r = 0; r < rows.size(); ++r) out.row(r) = m.row(rows[r]);
  return out;
}

Eigen::MatrixXd select_block(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(rows.size(), rows.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows.size(); ++c) out(r, c) = m(rows[r], rows[c]);
  }
  return out;
}

void check_covariance(const Eigen::MatrixXd& P, const char* what) {
  const double scale = std::max(1e-300, P.cwiseAbs().maxCoeff());
  if (!P.allFinite() || (P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw NumericalError(std::string(what) + " lost symmetry");
  }
  const double lo = min_eigenvalue(P);
  if (!(lo >= 1e-12 * P.trace()) || !(lo > 0.0)) {
    std::ostringstream os;
    os << what << " is not positive definite (min eigenvalue " << lo << ")";
    throw NumericalError(os.str());
  }
}

ArrivalCostState init_arrival(int i, const Eigen::MatrixXd& P0, const Eigen::VectorXd& x_bar0,
                              const Eigen::VectorXd& y0, const Eigen::MatrixXd& C_col_i,
                              const Eigen::VectorXd& offset, const Eigen::MatrixXd& R) {
  require_size(offset, y0.size(), "init_arrival offset");
  const FusionResult fr = fuse_quadratics(x_bar0, P0, C_col_i, y0 - offset, R);
  check_covariance(fr.H, "P̆");
  ArrivalCostState s;
  s.i = i;
  s.k = 0;
  s.P_breve = fr.H;
  s.x_breve = fr.sigma;
  return s;
}

ArrivalCostState output_update(const ArrivalCostState& s, const Eigen::VectorXd& y_next,
                               const Eigen::MatrixXd& H, const Eigen::VectorXd& offset,
                               const Eigen::MatrixXd& R) {
  require_size(offset, y_next.size(), "output_update offset");
  const FusionResult fr = fuse_quadratics(s.x_breve, s.P_breve, H, y_next - offset, R);
  check_covariance(fr.H, "P̌");
  ArrivalCostState out = s;
  out.P_check = fr.H;
  out.x_check = fr.sigma;
  return out;
}

ArrivalCostState time_update(const ArrivalCostState& s, const Eigen::MatrixXd& A_ii,
                             const Eigen::VectorXd& offset, const Eigen::MatrixXd& Q_i) {
  if (!s.has_check()) {
    throw std::logic_error("time_update requires a preceding output_update");
  }
  require_shape(A_ii, s.x_check.size(), s.x_check.size(), "time_update A_ii");
  require_size(offset, s.x_check.size(), "time_update offset");
  ArrivalCostState out = s;
  out.P_breve = symmetrize(Q_i + A_ii * s.P_check * A_ii.transpose());
  out.x_breve = A_ii * s.x_check + offset;
  check_covariance(out.P_breve, "P̆");
  out.P_check.resize(0, 0);
  out.x_check.resize(0);
  out.k = s.k + 1;
  return out;
}

ArrivalPrior arrival_readout(const ArrivalCostState& s, const Eigen::MatrixXd& A_ii,
                             const Eigen::VectorXd& offset, const Eigen::MatrixXd& Q_i) {
  require_shape(A_ii, s.x_breve.size(), s.x_breve.size(), "readout A_ii");
  require_size(offset, s.x_breve.size(), "readout offset");
  ArrivalPrior out;
  out.P = symmetrize(Q_i + A_ii * s.P_breve * A_ii.transpose());
  out.x_bar = A_ii * s.x_breve + offset;
  check_covariance(out.P, "P");
  return out;
}

namespace {

Eigen::VectorXd neighbor_drive(const PartitionedLinearModel& model, int i,
                               const Eigen::VectorXd& x_tilde) {
  const Partition& p = model.partition();
  require_size(x_tilde, p.nx(), "neighbor estimate");
  Eigen::VectorXd d = Eigen::VectorXd::Zero(p.state_dim(i));
  for (int l = 0; l < p.n(); ++l) {
    if (l == i) continue;
    d += model.A_block(i, l) * p.local_state(x_tilde, l);
  }
  return d;
}

}  // namespace

ArrivalCostState init_arrival(const PartitionedLinearModel& model, const DerivedSelectors& sel,
                              int i, const Eigen::VectorXd& y0, const Eigen::VectorXd& x_tilde0,
                              const Eigen::VectorXd& x_bar0_i, const std::vector<int>& rows) {
  require_size(x_tilde0, model.partition().nx(), "neighbor estimate");
  return init_arrival(
      i, model.P0_block(i), x_bar0_i, select_rows(y0, rows), select_rows(sel.C_col[i], rows),
      select_rows(Eigen::VectorXd(sel.C_tilde[i] * x_tilde0), rows), select_block(model.R(), rows));
}

ArrivalCostState output_update(const PartitionedLinearModel& model, const DerivedSelectors& sel,
                               const ArrivalCostState& s, const Eigen::VectorXd& y_next,
                               const Eigen::VectorXd& x_tilde, const std::vector<int>& rows) {
  require_size(x_tilde, model.partition().nx(), "neighbor estimate");
  const Eigen::MatrixXd& C = model.C();
  const Eigen::MatrixXd H = C * sel.A_col[s.i];
  const Eigen::VectorXd offset = C * (sel.A_tilde[s.i] * x_tilde);
  return output_update(s, select_rows(y_next, rows), select_rows(H, rows),
                       select_rows(offset, rows), select_block(model.R(), rows));
}

ArrivalCostState time_update(const PartitionedLinearModel& model, const ArrivalCostState& s,
                             const Eigen::VectorXd& x_tilde) {
  return time_update(s, model.A_block(s.i, s.i), neighbor_drive(model, s.i, x_tilde),
                     model.Q_block(s.i));
}

ArrivalPrior arrival_readout(const PartitionedLinearModel& model, const ArrivalCostState& s,
                             const Eigen::VectorXd& x_tilde) {
  return arrival_readout(s, model.A_block(s.i, s.i), neighbor_drive(model, s.i, x_tilde),
                         model.Q_block(s.i));
}

namespace {

Eigen::VectorXd with_block(const Partition& p, Eigen::VectorXd x, int i,
                           const Eigen::VectorXd& xi) {
  p.set_local_state(x, i, xi);
  return x;
}

// Block-diagonal output Jacobian at the global state x.
Eigen::MatrixXd output_jacobian(const NonlinearSystem& sys, const Eigen::VectorXd& x) {
  const Partition& p = sys.partition();
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(p.ny(), p.nx());
  for (int l = 0; l < p.n(); ++l) {
    C.block(p.output_offset(l), p.state_offset(l), p.output_dim(l), p.state_dim(l)) =
        sys.jacobian_h(l, p.local_state(x, l));
  }
  return C;
}

}  // namespace

ArrivalCostState init_arrival_nonlinear(const NonlinearSystem& sys, const NonlinearWeights& w,
                                        int i, const Eigen::VectorXd& y0,
                                        const Eigen::VectorXd& x_tilde0,
                                        const Eigen::VectorXd& x_bar0_i,
                                        const Eigen::VectorXd& lin_point,
                                        const std::vector<int>& rows) {
  const Partition& p = sys.partition();
  const Eigen::MatrixXd C = output_jacobian(sys, lin_point);
  const Eigen::MatrixXd H =
      select_rows(Eigen::MatrixXd(C.middleCols(p.state_offset(i), p.state_dim(i))), rows);
  const Eigen::VectorXd z = with_block(p, x_tilde0, i, x_bar0_i);
  const Eigen::VectorXd innov = select_rows(Eigen::VectorXd(y0 - sys.h(z)), rows);
  // fuse_quadratics works on b − H a, so hand it the innovation shifted by H a.
  const FusionResult fr =
      fuse_quadratics(x_bar0_i, w.P0.at(i), H, innov + H * x_bar0_i, select_block(w.R, rows));
  check_covariance(fr.H, "P̆");
  ArrivalCostState s;
  s.i = i;
  s.k = 0;
  s.P_breve = fr.H;
  s.x_breve = fr.sigma;
  return s;
}

ArrivalCostState output_update_nonlinear(const NonlinearSystem& sys, const NonlinearWeights& w,
                                         const ArrivalCostState& s, const Eigen::VectorXd& y_next,
                                         const Eigen::VectorXd& x_tilde,
                                         const Eigen::VectorXd& lin_point,
                                         const std::vector<int>& rows) {
  const Partition& p = sys.partition();
  const int i = s.i;
  const Linearization lin = linearize(sys, s.k, lin_point);
  const Eigen::MatrixXd C = output_jacobian(sys, sys.f(s.k, lin_point));
  const Eigen::MatrixXd H =
      select_rows(Eigen::MatrixXd(C * lin.A.middleCols(p.state_offset(i), p.state_dim(i))), rows);
  const Eigen::VectorXd z = with_block(p, x_tilde, i, s.x_breve);
  const Eigen::VectorXd innov = select_rows(Eigen::VectorXd(y_next - sys.h(sys.f(s.k, z))), rows);
  const FusionResult fr =
      fuse_quadratics(s.x_breve, s.P_breve, H, innov + H * s.x_breve, select_block(w.R, rows));
  check_covariance(fr.H, "P̌");
  ArrivalCostState out = s;
  out.P_check = fr.H;
  out.x_check = fr.sigma;
  return out;
}

ArrivalCostState time_update_nonlinear(const NonlinearSystem& sys, const NonlinearWeights& w,
                                       const ArrivalCostState& s, const Eigen::VectorXd& x_tilde,
                                       const Eigen::VectorXd& lin_point) {
  if (!s.has_check()) {
    throw std::logic_error("time_update requires a preceding output_update");
  }
  const Partition& p = sys.partition();
  Eigen::MatrixXd d_xi, d_Xi;
  sys.jacobian_f(s.k, s.i, lin_point, d_xi, d_Xi);
  ArrivalCostState out = s;
  out.P_breve = symmetrize(w.Q.at(s.i) + d_xi * s.P_check * d_xi.transpose());
  out.x_breve = sys.f_local(s.k, s.i, with_block(p, x_tilde, s.i, s.x_check));
  check_covariance(out.P_breve, "P̆");
  out.P_check.resize(0, 0);
  out.x_check.resize(0);
  out.k = s.k + 1;
  return out;
}

ArrivalPrior arrival_readout_nonlinear(const NonlinearSystem& sys, const NonlinearWeights& w,
                                       const ArrivalCostState& s, const Eigen::VectorXd& x_tilde,
                                       const Eigen::VectorXd& lin_point) {
  const Partition& p = sys.partition();
  Eigen::MatrixXd d_xi, d_Xi;
  sys.jacobian_f(s.k, s.i, lin_point, d_xi, d_Xi);
  ArrivalPrior out;
  out.P = symmetrize(w.Q.at(s.i) + d_xi * s.P_breve * d_xi.transpose());
  out.x_bar = sys.f_local(s.k, s.i, with_block(p, x_tilde, s.i, s.x_breve));
  check_covariance(out.P, "P");
  return out;
}

ArrivalCostState update_for_nonlinear(const NonlinearSystem& sys, const NonlinearWeights& w,
                                      const ArrivalCostState& s, const Eigen::VectorXd& y_next,
                                      const Eigen::VectorXd& x_tilde,
                                      const Eigen::VectorXd& lin_point,
                                      const std::vector<int>& rows) {
  return time_update_nonlinear(sys, w,
                               output_update_nonlinear(sys, w, s, y_next, x_tilde, lin_point, rows),
                               x_tilde, lin_point);
}

}  // namespace dmhe
