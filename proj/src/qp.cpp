#include "dmhe/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"

namespace dmhe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct WorkingRow {
  int row;
  int side;  // +1 lower, −1 upper, 0 equality
};

bool is_equality(const QpProblem& qp, int r) {
  return std::isfinite(qp.lower(r)) && qp.lower(r) == qp.upper(r);
}

// Rows of the working set oriented so that active constraints read nᵀx ≥ b.
Eigen::MatrixXd working_matrix(const QpProblem& qp, const std::vector<WorkingRow>& w) {
  Eigen::MatrixXd N(w.size(), qp.H.cols());
  for (size_t j = 0; j < w.size(); ++j) {
    N.row(j) = (w[j].side < 0 ? -1.0 : 1.0) * qp.G.row(w[j].row);
  }
  return N;
}

// Removes rounding drift when a single-variable row becomes active.
void snap_to_bound(const QpProblem& qp, int r, int side, Eigen::VectorXd& x) {
  Eigen::Index col = -1;
  for (Eigen::Index j = 0; j < qp.G.cols(); ++j) {
    if (qp.G(r, j) == 0.0) continue;
    if (col >= 0) return;
    col = j;
  }
  if (col < 0) return;
  const double bound = side > 0 ? qp.lower(r) : qp.upper(r);
  x(col) = bound / qp.G(r, col);
}

}  // namespace

double qp_kkt_residual(const QpProblem& qp, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& multipliers) {
  const Eigen::VectorXd grad = qp.H * x + qp.g;
  const Eigen::VectorXd stat = grad - qp.G.transpose() * multipliers;
  const double scale = 1.0 + qp.g.lpNorm<Eigen::Infinity>() + (qp.H * x).lpNorm<Eigen::Infinity>();
  double res = stat.size() ? stat.lpNorm<Eigen::Infinity>() / scale : 0.0;
  const Eigen::VectorXd Gx = qp.G * x;
  for (Eigen::Index r = 0; r < Gx.size(); ++r) {
    const double lo = qp.lower(r), hi = qp.upper(r);
    const double mag = 1.0 + std::abs(Gx(r));
    if (std::isfinite(lo)) res = std::max(res, (lo - Gx(r)) / mag);
    if (std::isfinite(hi)) res = std::max(res, (Gx(r) - hi) / mag);
    const double mu = multipliers(r);
    if (mu > 0.0 && std::isfinite(lo)) {
      res = std::max(res, mu * std::abs(Gx(r) - lo) / (scale * mag));
    } else if (mu < 0.0 && std::isfinite(hi)) {
      res = std::max(res, -mu * std::abs(Gx(r) - hi) / (scale * mag));
    } else if (mu != 0.0) {
      res = std::max(res, std::abs(mu) / scale);
    }
  }
  return res;
}

QpResult solve_qp(const QpProblem& qp, const Eigen::VectorXd& x0, const QpOptions& options) {
  const Eigen::Index n = qp.H.rows();
  const Eigen::Index m = qp.G.rows();
  require_shape(qp.H, n, n, "QP Hessian");
  require_size(qp.g, n, "QP gradient");
  require_shape(qp.G, m, n, "QP constraint matrix");
  require_size(qp.lower, m, "QP lower bounds");
  require_size(qp.upper, m, "QP upper bounds");
  require_size(x0, n, "QP starting point");

  const double tol = options.feasibility_tol;
  QpResult out;
  out.x = x0;
  Eigen::VectorXd& x = out.x;
  std::vector<WorkingRow> work;
  std::vector<char> in_work(m, 0);
  {
    const Eigen::VectorXd Gx = qp.G * x;
    for (int r = 0; r < m; ++r) {
      if (qp.lower(r) > qp.upper(r)) {
        std::ostringstream os;
        os << "constraint row " << r << " has lower bound above upper bound";
        throw InfeasibleError(os.str());
      }
      const double mag = 1.0 + std::abs(Gx(r));
      if (Gx(r) < qp.lower(r) - tol * mag || Gx(r) > qp.upper(r) + tol * mag) {
        std::ostringstream os;
        os << "starting point violates constraint row " << r;
        throw InfeasibleError(os.str());
      }
      if (is_equality(qp, r)) {
        work.push_back({r, 0});
        in_work[r] = 1;
      }
    }
  }

  bool at_subspace_min = false;
  for (;;) {
    const Eigen::MatrixXd N = working_matrix(qp, work);
    const Eigen::Index mw = N.rows();
    const Eigen::VectorXd q = qp.H * x + qp.g;
    Eigen::MatrixXd Z;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr;
    if (mw == 0) {
      Z = Eigen::MatrixXd::Identity(n, n);
    } else {
      qr.compute(N.transpose());
      const Eigen::MatrixXd Q = qr.householderQ();
      Z = Q.rightCols(n - mw);
    }

    Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
    if (!at_subspace_min && Z.cols() > 0) {
      const Eigen::MatrixXd ZHZ = symmetrize(Z.transpose() * qp.H * Z);
      Eigen::LLT<Eigen::MatrixXd> llt(ZHZ);
      if (llt.info() != Eigen::Success || spd_condition(ZHZ) > kMaxCondition) {
        throw NumericalError("QP reduced Hessian is not positive definite");
      }
      p = -Z * llt.solve(Z.transpose() * q);
    }
    const double pscale = 1e-14 * (1.0 + x.lpNorm<Eigen::Infinity>());
    if (at_subspace_min || p.size() == 0 || p.lpNorm<Eigen::Infinity>() <= pscale) {
      // Stationary on the working set: inspect multipliers.
      Eigen::VectorXd lambda(mw);
      if (mw > 0) {
        const Eigen::MatrixXd R = qr.matrixQR().topRows(mw).triangularView<Eigen::Upper>();
        const Eigen::MatrixXd Q = qr.householderQ();
        lambda =
            R.triangularView<Eigen::Upper>().solve(Eigen::VectorXd(Q.leftCols(mw).transpose() * q));
      }
      int drop = -1;
      double most_negative = 0.0;
      const double dual_tol = 1e-12 * (1.0 + q.lpNorm<Eigen::Infinity>());
      for (Eigen::Index j = 0; j < mw; ++j) {
        if (work[j].side == 0) continue;
        if (lambda(j) < -dual_tol && lambda(j) < most_negative) {
          most_negative = lambda(j);
          drop = static_cast<int>(j);
        }
      }
      if (drop < 0) {
        out.multipliers = Eigen::VectorXd::Zero(m);
        for (Eigen::Index j = 0; j < mw; ++j) {
          const double sgn = work[j].side < 0 ? -1.0 : 1.0;
          out.multipliers(work[j].row) = sgn * lambda(j);
          if (work[j].side != 0) out.active.push_back(work[j].row);
        }
        std::sort(out.active.begin(), out.active.end());
        out.kkt_residual = qp_kkt_residual(qp, x, out.multipliers);
        return out;
      }
      in_work[work[drop].row] = 0;
      work.erase(work.begin() + drop);
      at_subspace_min = false;
      if (++out.active_set_changes > options.max_active_set_changes) {
        throw NonConvergenceError("QP active-set change limit reached", x);
      }
      continue;
    }

    double alpha = 1.0;
    int block_row = -1, block_side = 0;
    const Eigen::VectorXd Gx = qp.G * x;
    const Eigen::VectorXd Gp = qp.G * p;
    for (int r = 0; r < m; ++r) {
      if (in_work[r]) continue;
      const double gp = Gp(r);
      const double small =
          1e-14 * (qp.G.row(r).lpNorm<Eigen::Infinity>() * p.lpNorm<Eigen::Infinity>());
      if (gp < -small && std::isfinite(qp.lower(r))) {
        const double a = std::max(0.0, (qp.lower(r) - Gx(r)) / gp);
        if (a < alpha) {
          alpha = a;
          block_row = r;
          block_side = 1;
        }
      } else if (gp > small && std::isfinite(qp.upper(r))) {
        const double a = std::max(0.0, (qp.upper(r) - Gx(r)) / gp);
        if (a < alpha) {
          alpha = a;
          block_row = r;
          block_side = -1;
        }
      }
    }
    x += alpha * p;
    if (block_row >= 0) {
      snap_to_bound(qp, block_row, block_side, x);
      work.push_back({block_row, block_side});
      in_work[block_row] = 1;
      out.constraints_touched = true;
      at_subspace_min = false;
      if (++out.active_set_changes > options.max_active_set_changes) {
        throw NonConvergenceError("QP active-set change limit reached", x);
      }
    } else {
      at_subspace_min = true;
    }
  }
}

}  // namespace dmhe
