#include "dmhe/plant.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "dmhe/linalg.hpp"

namespace dmhe {

using Eigen::VectorXd;

void NoiseSpec::validate() const {
  if (!(process_std >= 0.0) || !std::isfinite(process_std)) {
    throw std::invalid_argument("noise: process_std must be finite and >= 0");
  }
  if (!(measurement_std >= 0.0) || !std::isfinite(measurement_std)) {
    throw std::invalid_argument("noise: measurement_std must be finite and >= 0");
  }
}

GaussianStream::GaussianStream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  engine_.seed(seq);
}

double GaussianStream::uniform() {
  // 53 random bits mapped into (0, 1).
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double GaussianStream::next() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double r = std::sqrt(-2.0 * std::log(uniform()));
  const double theta = 2.0 * std::numbers::pi * uniform();
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

VectorXd GaussianStream::draw(Eigen::Index n, double std) {
  VectorXd out(n);
  for (Eigen::Index j = 0; j < n; ++j) out(j) = std * next();
  return out;
}

ScalingMap ScalingMap::identity(Eigen::Index n) { return {VectorXd::Ones(n)}; }

ScalingMap ScalingMap::from_reference(const VectorXd& x_ref) {
  ScalingMap map{x_ref.cwiseAbs()};
  map.validate();
  return map;
}

void ScalingMap::validate() const {
  for (Eigen::Index j = 0; j < factors.size(); ++j) {
    if (!(factors(j) > 0.0) || !std::isfinite(factors(j))) {
      throw std::invalid_argument("scaling: factor " + std::to_string(j) +
                                  " must be finite and positive");
    }
  }
}

VectorXd apply_scaling(const ScalingMap& map, const VectorXd& x) {
  require_size(x, map.size(), "apply_scaling: x");
  return x.cwiseQuotient(map.factors);
}

VectorXd invert_scaling(const ScalingMap& map, const VectorXd& xs) {
  require_size(xs, map.size(), "invert_scaling: x");
  return xs.cwiseProduct(map.factors);
}

PlantTrace simulate_linear(const PartitionedLinearModel& model, const VectorXd& x0, int T,
                           const NoiseSpec& noise) {
  noise.validate();
  if (T < 0) throw std::invalid_argument("simulate_linear: T must be >= 0");
  const Partition& p = model.partition();
  require_size(x0, p.nx(), "simulate_linear: x0");
  GaussianStream wgen(noise.seed, 0), vgen(noise.seed, 1);
  PlantTrace trace;
  VectorXd x = x0;
  for (int k = 0; k < T; ++k) {
    trace.states.push_back(x);
    trace.measurements.push_back(model.C() * x + vgen.draw(p.ny(), noise.measurement_std));
    x = model.A() * x + wgen.draw(p.nx(), noise.process_std);
  }
  return trace;
}

}  // namespace dmhe
