#pragma once

#include <array>
#include <string>

#include <Eigen/Dense>

#include "dmhe/coordinator.hpp"
#include "dmhe/plant.hpp"
#include "dmhe/system_model.hpp"

namespace dmhe {

// Q(t) = mean + amplitude·sin(omega·t), kJ/h with t in hours.
struct HeatProfile {
  double mean = 0.0;
  double amplitude = 0.0;
  double omega = 0.0;

  double operator()(double t) const;
};

// Two CSTRs and a flash separator with recycle; per-vessel states are
// (x_A, x_B, T) and the measured outputs are the three temperatures.
struct ReactorSeparatorConfig {
  std::array<double, 3> volume{1.0, 0.5, 1.0};      // m³
  double F10 = 0.0, F20 = 0.0, Fr = 0.0, Fp = 0.0;  // m³/h
  double xA10 = 1.0, xB10 = 0.0, xA20 = 1.0, xB20 = 0.0;
  double T10 = 300.0, T20 = 300.0;             // K
  double k1 = 0.0, k2 = 0.0;                   // 1/h
  double E1 = 5.0e4, E2 = 6.0e4;               // kJ/kmol
  double dH1 = 0.0, dH2 = 0.0;                 // kJ/kmol
  std::array<double, 3> alpha{1.0, 1.0, 1.0};  // relative volatilities A, B, C
  std::array<double, 3> Hvap{0.0, 0.0, 0.0};   // kJ/kmol
  double Cp = 4.2, R = 8.314, rho = 1000.0, MW = 50.0;
  std::array<HeatProfile, 3> heat;
  double sampling_period = 0.025;  // h
  int substeps = 10;
  Eigen::VectorXd x0;  // reference initial state, also the scaling reference

  void validate() const;
  static ReactorSeparatorConfig parse(const std::string& yaml_text);
  static ReactorSeparatorConfig load(const std::string& path);
  std::string to_yaml() const;
};

// Time derivative of vessel i given its own state and the neighbor state
// feeding it (vessel 3 for 1, 1 for 2, 2 for 3). Optional Jacobians.
Eigen::Vector3d vessel_rhs(const ReactorSeparatorConfig& cfg, int i, const Eigen::Vector3d& xi,
                           const Eigen::Vector3d& neighbor, double t,
                           Eigen::Matrix3d* d_xi = nullptr, Eigen::Matrix3d* d_neighbor = nullptr);

// Full 9-state right-hand side. Throws EvaluationError (vessel index) on a
// non-finite derivative.
Eigen::VectorXd reactor_rhs(const ReactorSeparatorConfig& cfg, const Eigen::VectorXd& x, double t);

// One sampling period of classical RK4 with cfg.substeps fixed substeps.
Eigen::VectorXd step_reactor_separator(const ReactorSeparatorConfig& cfg, const Eigen::VectorXd& x,
                                       double t);

// Vessel i over one sampling period from t with the neighbor held fixed,
// plus the sensitivities from the RK4 variational equations.
Eigen::Vector3d step_vessel(const ReactorSeparatorConfig& cfg, int i, const Eigen::Vector3d& xi,
                            const Eigen::Vector3d& neighbor, double t,
                            Eigen::Matrix3d* d_xi = nullptr, Eigen::Matrix3d* d_neighbor = nullptr);

// Index of the vessel feeding vessel i.
int upstream_vessel(int i);

// Three-subsystem discrete model in scaled coordinates: f_i is step_vessel
// with the neighbor held over the sample, h_i the scaled temperature.
NonlinearSystem reactor_separator_system(const ReactorSeparatorConfig& cfg,
                                         const ScalingMap& scaling);

// Truth trajectory and temperature measurements, both in scaled
// coordinates, with noise added in scaled space.
PlantTrace simulate_reactor_separator(const ReactorSeparatorConfig& cfg, const Eigen::VectorXd& x0,
                                      int T, const NoiseSpec& noise, const ScalingMap& scaling);

}  // namespace dmhe
