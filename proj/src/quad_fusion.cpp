#include "dmhe/quad_fusion.hpp"

#include <stdexcept>

#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"

namespace dmhe {

double QuadraticForm::operator()(const Eigen::VectorXd& x) const {
  require_size(x, center.size(), "QuadraticForm argument");
  return inverse_weighted_norm(x - center, weight) + offset;
}

void QuadraticForm::validate() const {
  require_shape(weight, center.size(), center.size(), "QuadraticForm weight");
  require_spd(weight, "QuadraticForm weight");
  if (!(offset >= 0.0)) {
    throw std::invalid_argument("QuadraticForm offset must be nonnegative");
  }
}

FusionResult fuse_quadratics(const Eigen::VectorXd& a, const Eigen::MatrixXd& A,
                             const Eigen::MatrixXd& C, const Eigen::VectorXd& b,
                             const Eigen::MatrixXd& B) {
  const Eigen::Index n = a.size();
  const Eigen::Index m = b.size();
  require_shape(A, n, n, "fuse_quadratics A");
  require_shape(C, m, n, "fuse_quadratics C");
  require_shape(B, m, m, "fuse_quadratics B");

  FusionResult out;
  if (m == 0) {
    out.H = symmetrize(A);
    out.sigma = a;
    out.pi = 0.0;
    return out;
  }
  const Eigen::MatrixXd AC = A * C.transpose();
  const auto S = checked_llt(C * AC + B, "innovation matrix CACᵀ+B");
  // Gain Kᵀ = S⁻¹ C A.
  const Eigen::MatrixXd Kt = S.solve(AC.transpose());
  out.H = symmetrize(A - AC * Kt);
  out.sigma = a + Kt.transpose() * (b - C * a);
  out.pi = inverse_weighted_norm(out.sigma - a, A) + inverse_weighted_norm(C * out.sigma - b, B);
  return out;
}

NormReduction reduce_norm_through_matrix(const Eigen::MatrixXd& C, const Eigen::MatrixXd& A,
                                         const Eigen::VectorXd& a) {
  require_shape(A, C.rows(), C.rows(), "reduce_norm_through_matrix A");
  require_size(a, C.rows(), "reduce_norm_through_matrix a");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(C);
  const auto& sv = svd.singularValues();
  const double tol = 1e-10 * (sv.size() > 0 ? sv(0) : 0.0);
  Eigen::Index rank = 0;
  for (Eigen::Index j = 0; j < sv.size(); ++j) {
    if (sv(j) > tol) ++rank;
  }
  if (C.cols() == 0 || rank != C.cols()) {
    throw RankError("reduce_norm_through_matrix: C must have full column rank");
  }
  const auto llt = checked_llt(A, "reduce_norm_through_matrix A");
  const Eigen::MatrixXd LiC = llt.matrixL().solve(C);
  const Eigen::VectorXd Lia = llt.matrixL().solve(a);
  NormReduction out;
  out.W = symmetrize(LiC.transpose() * LiC);
  out.b = checked_llt(out.W, "CᵀA⁻¹C").solve(LiC.transpose() * Lia);
  out.residual = (LiC * out.b - Lia).squaredNorm();
  return out;
}

Eigen::MatrixXd woodbury_inverse(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                 const Eigen::MatrixXd& C, const Eigen::MatrixXd& D) {
  require_shape(B, A.rows(), D.rows(), "woodbury B");
  require_shape(C, D.cols(), A.cols(), "woodbury C");
  const Eigen::PartialPivLU<Eigen::MatrixXd> Alu(A);
  const Eigen::MatrixXd AiB = Alu.solve(B);
  const Eigen::MatrixXd Ai = Alu.inverse();
  const Eigen::MatrixXd inner = C * AiB + D.inverse();
  return Ai - AiB * inner.partialPivLu().solve(C * Ai);
}

Eigen::MatrixXd woodbury_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                              const Eigen::MatrixXd& C, const Eigen::MatrixXd& D) {
  require_shape(B, A.rows(), D.rows(), "woodbury B");
  require_shape(C, D.cols(), A.cols(), "woodbury C");
  const Eigen::MatrixXd AiB = A.partialPivLu().solve(B);
  const Eigen::MatrixXd inner = D.inverse() + C * AiB;
  // X = AiB · inner⁻¹, solved from innerᵀ Xᵀ = AiBᵀ.
  return inner.transpose().partialPivLu().solve(AiB.transpose()).transpose();
}

}  // namespace dmhe
