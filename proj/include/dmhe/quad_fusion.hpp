#pragma once

#include <Eigen/Dense>

namespace dmhe {

// ‖x − center‖² weighted by weight⁻¹, plus a constant offset.
struct QuadraticForm {
  Eigen::VectorXd center;
  Eigen::MatrixXd weight;
  double offset = 0.0;

  double operator()(const Eigen::VectorXd& x) const;
  void validate() const;
};

struct FusionResult {
  Eigen::MatrixXd H;
  Eigen::VectorXd sigma;
  double pi = 0.0;
};

// Combines ‖x − a‖²_{A⁻¹} + ‖Cx − b‖²_{B⁻¹} into ‖x − sigma‖²_{H⁻¹} + pi.
FusionResult fuse_quadratics(const Eigen::VectorXd& a, const Eigen::MatrixXd& A,
                             const Eigen::MatrixXd& C, const Eigen::VectorXd& b,
                             const Eigen::MatrixXd& B);

struct NormReduction {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  // ‖Cb − a‖²_{A⁻¹}; zero whenever a lies in the range of C.
  double residual = 0.0;
};

// Rewrites ‖Cx − a‖²_{A⁻¹} as ‖x − b‖²_W + residual for full-column-rank C.
NormReduction reduce_norm_through_matrix(const Eigen::MatrixXd& C, const Eigen::MatrixXd& A,
                                         const Eigen::VectorXd& a);

// (A + BDC)⁻¹ evaluated as A⁻¹ − A⁻¹B(CA⁻¹B + D⁻¹)⁻¹CA⁻¹.
Eigen::MatrixXd woodbury_inverse(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                 const Eigen::MatrixXd& C, const Eigen::MatrixXd& D);

// (A + BDC)⁻¹BD evaluated as A⁻¹B(D⁻¹ + CA⁻¹B)⁻¹.
Eigen::MatrixXd woodbury_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                              const Eigen::MatrixXd& C, const Eigen::MatrixXd& D);

}  // namespace dmhe
