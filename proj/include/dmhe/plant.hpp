#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "dmhe/coordinator.hpp"
#include "dmhe/system_model.hpp"

namespace dmhe {

// Zero-mean Gaussian process and measurement noise with a reproducible seed.
struct NoiseSpec {
  double process_std = 0.0;
  double measurement_std = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Standard normal draws from mt19937_64 through the Box–Muller transform, so
// streams are identical on every platform for a given seed.
class GaussianStream {
 public:
  GaussianStream(std::uint64_t seed, std::uint64_t stream);
  double next();
  Eigen::VectorXd draw(Eigen::Index n, double std);

 private:
  double uniform();
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Per-state factors s: scaled = x / s.
struct ScalingMap {
  Eigen::VectorXd factors;

  static ScalingMap identity(Eigen::Index n);
  // Factors |x_ref| (each must be nonzero).
  static ScalingMap from_reference(const Eigen::VectorXd& x_ref);
  Eigen::Index size() const { return factors.size(); }
  void validate() const;
};

Eigen::VectorXd apply_scaling(const ScalingMap& map, const Eigen::VectorXd& x);
Eigen::VectorXd invert_scaling(const ScalingMap& map, const Eigen::VectorXd& xs);

// x_{k+1} = A x_k + w_k, y_k = C x_k + v_k for k = 0..T−1.
PlantTrace simulate_linear(const PartitionedLinearModel& model, const Eigen::VectorXd& x0, int T,
                           const NoiseSpec& noise);

}  // namespace dmhe
