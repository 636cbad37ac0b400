#include "dmhe/reactor_separator.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include <yaml-cpp/yaml.h>

#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"
#include "yaml_util.hpp"

namespace dmhe {

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

double HeatProfile::operator()(double t) const { return mean + amplitude * std::sin(omega * t); }

void ReactorSeparatorConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("reactor: ") + name + " must be finite and positive");
    }
  };
  auto nonnegative = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ConfigError(std::string("reactor: ") + name + " must be finite and non-negative");
    }
  };
  for (double v : volume) positive(v, "volume");
  nonnegative(F10, "F10");
  nonnegative(F20, "F20");
  nonnegative(Fr, "Fr");
  nonnegative(Fp, "Fp");
  nonnegative(k1, "k1");
  nonnegative(k2, "k2");
  positive(E1, "E1");
  positive(E2, "E2");
  positive(T10, "T10");
  positive(T20, "T20");
  for (double v : alpha) positive(v, "alpha");
  positive(Cp, "Cp");
  positive(R, "R");
  positive(rho, "rho");
  positive(MW, "MW");
  positive(sampling_period, "sampling_period");
  for (double v : {xA10, xB10, xA20, xB20}) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ConfigError("reactor: feed fractions must lie in [0, 1]");
    }
  }
  if (substeps < 1) throw ConfigError("reactor: substeps must be >= 1");
  if (x0.size() != 9) throw ConfigError("reactor: x0 must have 9 entries");
  for (int j = 0; j < 9; ++j) {
    if (!(std::abs(x0(j)) > 0.0) || !std::isfinite(x0(j))) {
      throw ConfigError("reactor: x0 entries must be finite and nonzero");
    }
  }
}

namespace {

std::array<double, 3> to_array3(const YAML::Node& node, const std::string& where) {
  const VectorXd v = yaml::to_vector(node, where);
  if (v.size() != 3) throw ConfigError(where + ": expected 3 entries");
  return {v(0), v(1), v(2)};
}

}  // namespace

ReactorSeparatorConfig ReactorSeparatorConfig::parse(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("reactor: ") + e.what());
  }
  ReactorSeparatorConfig c;
  const std::string w = "reactor";
  c.volume = to_array3(yaml::child(root, "volumes", w), w + ".volumes");
  const auto flows = yaml::child(root, "flows", w);
  c.F10 = yaml::to_double(yaml::child(flows, "F10", w + ".flows"), "F10");
  c.F20 = yaml::to_double(yaml::child(flows, "F20", w + ".flows"), "F20");
  c.Fr = yaml::to_double(yaml::child(flows, "Fr", w + ".flows"), "Fr");
  c.Fp = yaml::to_double(yaml::child(flows, "Fp", w + ".flows"), "Fp");
  const auto feed = yaml::child(root, "feed", w);
  c.xA10 = yaml::to_double(yaml::child(feed, "xA10", w + ".feed"), "xA10");
  c.xB10 = yaml::to_double(yaml::child(feed, "xB10", w + ".feed"), "xB10");
  c.xA20 = yaml::to_double(yaml::child(feed, "xA20", w + ".feed"), "xA20");
  c.xB20 = yaml::to_double(yaml::child(feed, "xB20", w + ".feed"), "xB20");
  c.T10 = yaml::to_double(yaml::child(feed, "T10", w + ".feed"), "T10");
  c.T20 = yaml::to_double(yaml::child(feed, "T20", w + ".feed"), "T20");
  const auto kin = yaml::child(root, "kinetics", w);
  const std::string kw = w + ".kinetics";
  c.k1 = yaml::to_double(yaml::child(kin, "k1", kw), "k1");
  c.k2 = yaml::to_double(yaml::child(kin, "k2", kw), "k2");
  c.E1 = yaml::to_double(yaml::child(kin, "E1", kw), "E1");
  c.E2 = yaml::to_double(yaml::child(kin, "E2", kw), "E2");
  c.dH1 = yaml::to_double(yaml::child(kin, "dH1", kw), "dH1");
  c.dH2 = yaml::to_double(yaml::child(kin, "dH2", kw), "dH2");
  const auto sep = yaml::child(root, "separator", w);
  c.alpha = to_array3(yaml::child(sep, "alpha", w + ".separator"), "alpha");
  c.Hvap = to_array3(yaml::child(sep, "Hvap", w + ".separator"), "Hvap");
  const auto phys = yaml::child(root, "physical", w);
  const std::string pw = w + ".physical";
  c.Cp = yaml::to_double(yaml::child(phys, "Cp", pw), "Cp");
  c.R = yaml::to_double(yaml::child(phys, "R", pw), "R");
  c.rho = yaml::to_double(yaml::child(phys, "rho", pw), "rho");
  c.MW = yaml::to_double(yaml::child(phys, "MW", pw), "MW");
  const auto heat = yaml::child(root, "heat", w);
  if (!heat.IsSequence() || heat.size() != 3) {
    throw ConfigError("reactor.heat: expected a list of 3 profiles");
  }
  for (int i = 0; i < 3; ++i) {
    const std::string hw = w + ".heat[" + std::to_string(i) + "]";
    c.heat[i].mean = yaml::to_double(yaml::child(heat[i], "mean", hw), hw);
    c.heat[i].amplitude = yaml::to_double(yaml::child(heat[i], "amplitude", hw), hw);
    c.heat[i].omega = yaml::to_double(yaml::child(heat[i], "omega", hw), hw);
  }
  c.sampling_period =
      yaml::to_double(yaml::child(root, "sampling_period", w), w + ".sampling_period");
  c.substeps = yaml::to_int(yaml::child(root, "substeps", w), w + ".substeps");
  c.x0 = yaml::to_vector(yaml::child(root, "x0", w), w + ".x0");
  c.validate();
  return c;
}

ReactorSeparatorConfig ReactorSeparatorConfig::load(const std::string& path) {
  const YAML::Node node = yaml::load_file(path);
  YAML::Emitter out;
  out << node;
  return parse(out.c_str());
}

std::string ReactorSeparatorConfig::to_yaml() const {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  auto vec3 = [&](const std::array<double, 3>& a) {
    yaml::emit_vector(out, Eigen::Vector3d(a[0], a[1], a[2]));
  };
  out << YAML::BeginMap;
  out << YAML::Key << "volumes" << YAML::Value;
  vec3(volume);
  out << YAML::Key << "flows" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "F10" << YAML::Value << F10 << YAML::Key << "F20" << YAML::Value << F20
      << YAML::Key << "Fr" << YAML::Value << Fr << YAML::Key << "Fp" << YAML::Value << Fp
      << YAML::EndMap;
  out << YAML::Key << "feed" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "xA10" << YAML::Value << xA10 << YAML::Key << "xB10" << YAML::Value << xB10
      << YAML::Key << "xA20" << YAML::Value << xA20 << YAML::Key << "xB20" << YAML::Value << xB20
      << YAML::Key << "T10" << YAML::Value << T10 << YAML::Key << "T20" << YAML::Value << T20
      << YAML::EndMap;
  out << YAML::Key << "kinetics" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "k1" << YAML::Value << k1 << YAML::Key << "k2" << YAML::Value << k2
      << YAML::Key << "E1" << YAML::Value << E1 << YAML::Key << "E2" << YAML::Value << E2
      << YAML::Key << "dH1" << YAML::Value << dH1 << YAML::Key << "dH2" << YAML::Value << dH2
      << YAML::EndMap;
  out << YAML::Key << "separator" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "alpha" << YAML::Value;
  vec3(alpha);
  out << YAML::Key << "Hvap" << YAML::Value;
  vec3(Hvap);
  out << YAML::EndMap;
  out << YAML::Key << "physical" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "Cp" << YAML::Value << Cp << YAML::Key << "R" << YAML::Value << R << YAML::Key
      << "rho" << YAML::Value << rho << YAML::Key << "MW" << YAML::Value << MW << YAML::EndMap;
  out << YAML::Key << "heat" << YAML::Value << YAML::BeginSeq;
  for (const auto& h : heat) {
    out << YAML::Flow << YAML::BeginMap << YAML::Key << "mean" << YAML::Value << h.mean << YAML::Key
        << "amplitude" << YAML::Value << h.amplitude << YAML::Key << "omega" << YAML::Value
        << h.omega << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "sampling_period" << YAML::Value << sampling_period;
  out << YAML::Key << "substeps" << YAML::Value << substeps;
  out << YAML::Key << "x0" << YAML::Value;
  yaml::emit_vector(out, x0);
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

int upstream_vessel(int i) {
  switch (i) {
    case 0:
      return 2;
    case 1:
      return 0;
    case 2:
      return 1;
    default:
      throw std::out_of_range("reactor: vessel index must be 0, 1 or 2");
  }
}

namespace {

// Vapor-liquid split of the separator: recycle fractions and their
// derivatives with respect to (x_A3, x_B3).
struct Recycle {
  Vector3d x;                     // x_Ar, x_Br, x_Cr
  Eigen::Matrix<double, 3, 2> d;  // d x_r / d(x_A3, x_B3)
};

Recycle recycle(const ReactorSeparatorConfig& c, double a, double b) {
  const double aA = c.alpha[0], aB = c.alpha[1], aC = c.alpha[2];
  const double xc = 1.0 - a - b;
  const double D = aA * a + aB * b + aC * xc;
  const double dDa = aA - aC, dDb = aB - aC;
  Recycle r;
  r.x << aA * a / D, aB * b / D, aC * xc / D;
  const double D2 = D * D;
  r.d(0, 0) = aA / D - aA * a * dDa / D2;
  r.d(0, 1) = -aA * a * dDb / D2;
  r.d(1, 0) = -aB * b * dDa / D2;
  r.d(1, 1) = aB / D - aB * b * dDb / D2;
  r.d(2, 0) = -aC / D - aC * xc * dDa / D2;
  r.d(2, 1) = -aC / D - aC * xc * dDb / D2;
  return r;
}

// Reaction terms r1 = k1 e^{−E1/RT} x_A, r2 = k2 e^{−E2/RT} x_B and the
// resulting contributions (and Jacobian) for a CSTR.
void add_reactions(const ReactorSeparatorConfig& c, const Vector3d& x, Vector3d& dx, Matrix3d* J) {
  const double a = x(0), b = x(1), T = x(2);
  const double e1 = c.k1 * std::exp(-c.E1 / (c.R * T));
  const double e2 = c.k2 * std::exp(-c.E2 / (c.R * T));
  const double r1 = e1 * a, r2 = e2 * b;
  const double g1 = -c.dH1 / (c.Cp * c.MW), g2 = -c.dH2 / (c.Cp * c.MW);
  dx(0) -= r1;
  dx(1) += r1 - r2;
  dx(2) += g1 * r1 + g2 * r2;
  if (J != nullptr) {
    const double dr1T = r1 * c.E1 / (c.R * T * T);
    const double dr2T = r2 * c.E2 / (c.R * T * T);
    (*J)(0, 0) -= e1;
    (*J)(0, 2) -= dr1T;
    (*J)(1, 0) += e1;
    (*J)(1, 1) -= e2;
    (*J)(1, 2) += dr1T - dr2T;
    (*J)(2, 0) += g1 * e1;
    (*J)(2, 1) += g2 * e2;
    (*J)(2, 2) += g1 * dr1T + g2 * dr2T;
  }
}

}  // namespace

Vector3d vessel_rhs(const ReactorSeparatorConfig& c, int i, const Vector3d& x, const Vector3d& nb,
                    double t, Matrix3d* d_xi, Matrix3d* d_nb) {
  Vector3d dx = Vector3d::Zero();
  Matrix3d Jx = Matrix3d::Zero(), Jn = Matrix3d::Zero();
  const double V = c.volume.at(i);
  const double heat = c.heat.at(i)(t) / (c.rho * c.Cp * V);
  const double F1 = c.F10 + c.Fr;
  const double F2 = F1 + c.F20;
  switch (i) {
    case 0: {
      const Recycle r = recycle(c, nb(0), nb(1));
      const double f = c.F10 / V, g = c.Fr / V;
      dx(0) = f * (c.xA10 - x(0)) + g * (r.x(0) - x(0));
      dx(1) = f * (c.xB10 - x(1)) + g * (r.x(1) - x(1));
      dx(2) = f * (c.T10 - x(2)) + g * (nb(2) - x(2)) + heat;
      Jx.diagonal().setConstant(-(f + g));
      Jn.block<2, 2>(0, 0) = g * r.d.topRows<2>();
      Jn(2, 2) = g;
      add_reactions(c, x, dx, &Jx);
      break;
    }
    case 1: {
      const double f = F1 / V, g = c.F20 / V;
      dx(0) = f * (nb(0) - x(0)) + g * (c.xA20 - x(0));
      dx(1) = f * (nb(1) - x(1)) + g * (c.xB20 - x(1));
      dx(2) = f * (nb(2) - x(2)) + g * (c.T20 - x(2)) + heat;
      Jx.diagonal().setConstant(-(f + g));
      Jn.diagonal().setConstant(f);
      add_reactions(c, x, dx, &Jx);
      break;
    }
    case 2: {
      const Recycle r = recycle(c, x(0), x(1));
      const double f = F2 / V, g = (c.Fr + c.Fp) / V;
      const double hv = g / (c.rho * c.Cp * c.MW);
      const Vector3d H(c.Hvap[0], c.Hvap[1], c.Hvap[2]);
      dx(0) = f * (nb(0) - x(0)) - g * (r.x(0) - x(0));
      dx(1) = f * (nb(1) - x(1)) - g * (r.x(1) - x(1));
      dx(2) = f * (nb(2) - x(2)) + heat - hv * H.dot(r.x);
      Jx.diagonal().setConstant(g - f);
      Jx.block<2, 2>(0, 0) -= g * r.d.topRows<2>();
      Jx(2, 2) = -f;
      Jx.block<1, 2>(2, 0) = -hv * (H.transpose() * r.d);
      Jn.diagonal().setConstant(f);
      break;
    }
    default:
      throw std::out_of_range("reactor: vessel index must be 0, 1 or 2");
  }
  if (!dx.allFinite()) {
    throw EvaluationError("reactor: non-finite derivative in vessel " + std::to_string(i + 1), i);
  }
  if (d_xi != nullptr) *d_xi = Jx;
  if (d_nb != nullptr) *d_nb = Jn;
  return dx;
}

VectorXd reactor_rhs(const ReactorSeparatorConfig& c, const VectorXd& x, double t) {
  require_size(x, 9, "reactor_rhs: x");
  VectorXd dx(9);
  for (int i = 0; i < 3; ++i) {
    dx.segment<3>(3 * i) =
        vessel_rhs(c, i, x.segment<3>(3 * i), x.segment<3>(3 * upstream_vessel(i)), t);
  }
  return dx;
}

VectorXd step_reactor_separator(const ReactorSeparatorConfig& c, const VectorXd& x, double t) {
  require_size(x, 9, "step_reactor_separator: x");
  const double h = c.sampling_period / c.substeps;
  VectorXd y = x;
  for (int s = 0; s < c.substeps; ++s) {
    const double ts = t + s * h;
    const VectorXd k1 = reactor_rhs(c, y, ts);
    const VectorXd k2 = reactor_rhs(c, y + 0.5 * h * k1, ts + 0.5 * h);
    const VectorXd k3 = reactor_rhs(c, y + 0.5 * h * k2, ts + 0.5 * h);
    const VectorXd k4 = reactor_rhs(c, y + h * k3, ts + h);
    y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}

Vector3d step_vessel(const ReactorSeparatorConfig& c, int i, const Vector3d& x, const Vector3d& nb,
                     double t, Matrix3d* d_xi, Matrix3d* d_nb) {
  const bool sens = d_xi != nullptr || d_nb != nullptr;
  const double h = c.sampling_period / c.substeps;
  Vector3d y = x;
  Matrix3d Sx = Matrix3d::Identity(), Sn = Matrix3d::Zero();
  Matrix3d Jx, Jn;
  for (int s = 0; s < c.substeps; ++s) {
    const double ts = t + s * h;
    if (!sens) {
      const Vector3d k1 = vessel_rhs(c, i, y, nb, ts);
      const Vector3d k2 = vessel_rhs(c, i, y + 0.5 * h * k1, nb, ts + 0.5 * h);
      const Vector3d k3 = vessel_rhs(c, i, y + 0.5 * h * k2, nb, ts + 0.5 * h);
      const Vector3d k4 = vessel_rhs(c, i, y + h * k3, nb, ts + h);
      y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      continue;
    }
    // RK4 on the state augmented with dy/dx and dy/dneighbor.
    const Vector3d k1 = vessel_rhs(c, i, y, nb, ts, &Jx, &Jn);
    const Matrix3d K1x = Jx * Sx, K1n = Jx * Sn + Jn;
    const Vector3d y2 = y + 0.5 * h * k1;
    const Matrix3d S2x = Sx + 0.5 * h * K1x, S2n = Sn + 0.5 * h * K1n;
    const Vector3d k2 = vessel_rhs(c, i, y2, nb, ts + 0.5 * h, &Jx, &Jn);
    const Matrix3d K2x = Jx * S2x, K2n = Jx * S2n + Jn;
    const Vector3d y3 = y + 0.5 * h * k2;
    const Matrix3d S3x = Sx + 0.5 * h * K2x, S3n = Sn + 0.5 * h * K2n;
    const Vector3d k3 = vessel_rhs(c, i, y3, nb, ts + 0.5 * h, &Jx, &Jn);
    const Matrix3d K3x = Jx * S3x, K3n = Jx * S3n + Jn;
    const Vector3d y4 = y + h * k3;
    const Matrix3d S4x = Sx + h * K3x, S4n = Sn + h * K3n;
    const Vector3d k4 = vessel_rhs(c, i, y4, nb, ts + h, &Jx, &Jn);
    const Matrix3d K4x = Jx * S4x, K4n = Jx * S4n + Jn;
    y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    Sx += h / 6.0 * (K1x + 2.0 * K2x + 2.0 * K3x + K4x);
    Sn += h / 6.0 * (K1n + 2.0 * K2n + 2.0 * K3n + K4n);
  }
  if (d_xi != nullptr) *d_xi = Sx;
  if (d_nb != nullptr) *d_nb = Sn;
  return y;
}

NonlinearSystem reactor_separator_system(const ReactorSeparatorConfig& cfg,
                                         const ScalingMap& scaling) {
  cfg.validate();
  scaling.validate();
  if (scaling.size() != 9) {
    throw std::invalid_argument("reactor_separator_system: scaling must have 9 factors");
  }
  std::vector<std::vector<int>> graph(3);
  for (int i = 0; i < 3; ++i) graph[i] = {upstream_vessel(i)};
  Partition partition({3, 3, 3}, {1, 1, 1}, graph);

  std::vector<NonlinearSubsystemModel> subs(3);
  for (int i = 0; i < 3; ++i) {
    const int u = upstream_vessel(i);
    const Vector3d s = scaling.factors.segment<3>(3 * i);
    const Vector3d su = scaling.factors.segment<3>(3 * u);
    const double dt = cfg.sampling_period;
    subs[i].f = [cfg, i, s, su, dt](int k, const VectorXd& xi, const VectorXd& Xi) -> VectorXd {
      const Vector3d x = Vector3d(xi).cwiseProduct(s);
      const Vector3d nb = Vector3d(Xi).cwiseProduct(su);
      return step_vessel(cfg, i, x, nb, k * dt).cwiseQuotient(s);
    };
    subs[i].jac_f = [cfg, i, s, su, dt](int k, const VectorXd& xi, const VectorXd& Xi,
                                        MatrixXd& d_xi, MatrixXd& d_Xi) {
      const Vector3d x = Vector3d(xi).cwiseProduct(s);
      const Vector3d nb = Vector3d(Xi).cwiseProduct(su);
      Matrix3d Sx, Sn;
      step_vessel(cfg, i, x, nb, k * dt, &Sx, &Sn);
      d_xi = s.cwiseInverse().asDiagonal() * Sx * s.asDiagonal();
      d_Xi = s.cwiseInverse().asDiagonal() * Sn * su.asDiagonal();
    };
    subs[i].h = [](const VectorXd& xi) -> VectorXd { return xi.tail(1); };
    subs[i].jac_h = [](const VectorXd&) -> MatrixXd {
      MatrixXd J = MatrixXd::Zero(1, 3);
      J(0, 2) = 1.0;
      return J;
    };
  }
  return NonlinearSystem(partition, std::move(subs), apply_scaling(scaling, cfg.x0));
}

PlantTrace simulate_reactor_separator(const ReactorSeparatorConfig& cfg, const VectorXd& x0, int T,
                                      const NoiseSpec& noise, const ScalingMap& scaling) {
  cfg.validate();
  noise.validate();
  require_size(x0, 9, "simulate_reactor_separator: x0");
  if (T < 0) throw std::invalid_argument("simulate_reactor_separator: T must be >= 0");
  GaussianStream wgen(noise.seed, 0), vgen(noise.seed, 1);
  PlantTrace trace;
  VectorXd xs = apply_scaling(scaling, x0);
  for (int k = 0; k < T; ++k) {
    trace.states.push_back(xs);
    VectorXd y(3);
    for (int i = 0; i < 3; ++i) y(i) = xs(3 * i + 2);
    trace.measurements.push_back(y + vgen.draw(3, noise.measurement_std));
    const VectorXd next =
        step_reactor_separator(cfg, invert_scaling(scaling, xs), k * cfg.sampling_period);
    xs = apply_scaling(scaling, next) + wgen.draw(9, noise.process_std);
  }
  return trace;
}

}  // namespace dmhe
