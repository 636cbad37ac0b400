#include "dmhe/linalg.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "dmhe/errors.hpp"

namespace dmhe {

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

void require_shape(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols,
                   const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << what << ": expected " << rows << "x" << cols << ", got " << m.rows() << "x" << m.cols();
    throw std::invalid_argument(os.str());
  }
}

void require_size(const Eigen::VectorXd& v, Eigen::Index size, const std::string& what) {
  if (v.size() != size) {
    std::ostringstream os;
    os << what << ": expected length " << size << ", got " << v.size();
    throw std::invalid_argument(os.str());
  }
}

void require_spd(const Eigen::MatrixXd& m, const std::string& what) {
  if (m.rows() != m.cols()) {
    throw std::invalid_argument(what + ": matrix is not square");
  }
  if (!m.allFinite()) throw NumericalError(what + ": non-finite entries");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw NumericalError(what + ": matrix is not symmetric");
  }
  if (m.size() > 0 && min_eigenvalue(m) <= 0.0) {
    throw NumericalError(what + ": matrix is not positive definite");
  }
}

double min_eigenvalue(const Eigen::MatrixXd& symmetric) {
  if (symmetric.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(symmetric), Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double spd_condition(const Eigen::MatrixXd& symmetric) {
  if (symmetric.size() == 0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(symmetric), Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues()(0);
  const double hi = es.eigenvalues()(es.eigenvalues().size() - 1);
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& m, const std::string& what) {
  const double cond = spd_condition(m);
  if (!(cond <= kMaxCondition)) {
    std::ostringstream os;
    os << what << ": numerically singular (condition " << cond << ")";
    throw NumericalError(os.str());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) {
    throw NumericalError(what + ": Cholesky factorization failed");
  }
  return llt;
}

double inverse_weighted_norm(const Eigen::VectorXd& e, const Eigen::MatrixXd& w) {
  if (e.size() == 0) return 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(w));
  if (llt.info() != Eigen::Success) {
    throw NumericalError("weight matrix is not positive definite");
  }
  return llt.matrixL().solve(e).squaredNorm();
}

Eigen::MatrixXd block_diagonal(const std::vector<Eigen::MatrixXd>& blocks) {
  Eigen::Index rows = 0, cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
  Eigen::Index r = 0, c = 0;
  for (const auto& b : blocks) {
    out.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return out;
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, const std::string& what) {
  auto llt = checked_llt(m, what);
  return symmetrize(llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols())));
}

}  // namespace dmhe
