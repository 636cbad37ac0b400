#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dmhe {

inline constexpr double kMaxCondition = 1e14;

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m);

// Throws std::invalid_argument naming `what` when the shape differs.
void require_shape(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols,
                   const std::string& what);
void require_size(const Eigen::VectorXd& v, Eigen::Index size, const std::string& what);

// Symmetric (to 1e-10 relative) with strictly positive spectrum, else throws.
void require_spd(const Eigen::MatrixXd& m, const std::string& what);

double min_eigenvalue(const Eigen::MatrixXd& symmetric);

// Ratio of extreme eigenvalues; infinity when the matrix is not positive
// definite.
double spd_condition(const Eigen::MatrixXd& symmetric);

// Cholesky factor of an SPD matrix whose condition is at most kMaxCondition.
Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& m, const std::string& what);

// ‖e‖² weighted by the inverse of the SPD matrix `w`.
double inverse_weighted_norm(const Eigen::VectorXd& e, const Eigen::MatrixXd& w);

Eigen::MatrixXd block_diagonal(const std::vector<Eigen::MatrixXd>& blocks);

// Dense inverse of an SPD matrix through its Cholesky factor.
Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, const std::string& what);

}  // namespace dmhe
