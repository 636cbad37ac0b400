#include <doctest.h>

#include <cmath>
#include <limits>

#include "dmhe/errors.hpp"
#include "dmhe/plant.hpp"
#include "dmhe/reactor_separator.hpp"
#include "test_util.hpp"

using dmhe::testing::max_abs;
using dmhe::testing::Rng;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

dmhe::ReactorSeparatorConfig shipped() {
  return dmhe::ReactorSeparatorConfig::load(std::string(DMHE_DATA_DIR) + "/reactor_separator.yaml");
}

double sample_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean) / static_cast<double>(v.size() - 1);
  return std::sqrt(var);
}

}  // namespace

TEST_CASE("identity dynamics without noise hold the state") {
  const MatrixXd I2 = MatrixXd::Identity(2, 2), I1 = MatrixXd::Identity(1, 2);
  const dmhe::PartitionedLinearModel m({{I2}}, {I1}, {I2}, {MatrixXd::Identity(1, 1)}, {I2});
  VectorXd x0(2);
  x0 << 0.3, -1.2;
  const auto tr = dmhe::simulate_linear(m, x0, 15, dmhe::NoiseSpec{});
  REQUIRE(tr.states.size() == 15);
  for (const auto& x : tr.states) CHECK((x.array() == x0.array()).all());
}

TEST_CASE("noise-free outputs follow C A^k x0") {
  Rng rng(71);
  const auto m = dmhe::testing::random_model(rng, {2, 1}, {1, 1}, 0.3);
  const VectorXd x0 = rng.vector(3);
  const auto tr = dmhe::simulate_linear(m, x0, 20, dmhe::NoiseSpec{});
  VectorXd x = x0;
  for (int k = 0; k < 20; ++k) {
    CHECK(max_abs(tr.measurements[k] - m.C() * x) < 1e-13);
    x = m.A() * x;
  }
}

TEST_CASE("seeded runs are bit-identical and seeds differ") {
  Rng rng(72);
  const auto m = dmhe::testing::random_model(rng, {2, 2}, {1, 1}, 0.3);
  const VectorXd x0 = rng.vector(4);
  const auto a = dmhe::simulate_linear(m, x0, 30, dmhe::NoiseSpec{0.1, 0.2, 11});
  const auto b = dmhe::simulate_linear(m, x0, 30, dmhe::NoiseSpec{0.1, 0.2, 11});
  const auto c = dmhe::simulate_linear(m, x0, 30, dmhe::NoiseSpec{0.1, 0.2, 12});
  bool differs = false;
  for (int k = 0; k < 30; ++k) {
    CHECK((a.states[k].array() == b.states[k].array()).all());
    CHECK((a.measurements[k].array() == b.measurements[k].array()).all());
    differs = differs || (a.measurements[k] - c.measurements[k]).norm() > 0;
  }
  CHECK(differs);
}

TEST_CASE("Gaussian streams have the requested spread") {
  dmhe::GaussianStream g(5, 0);
  std::vector<double> draws;
  for (int t = 0; t < 100000; ++t) draws.push_back(g.next());
  CHECK(std::abs(sample_std(draws) - 1.0) < 0.02);

  // Injected process noise recovered from x_{k+1} − A x_k.
  const MatrixXd Z = MatrixXd::Zero(2, 2), I = MatrixXd::Identity(2, 2);
  const dmhe::PartitionedLinearModel m({{Z}}, {MatrixXd::Identity(1, 2)}, {I},
                                       {MatrixXd::Identity(1, 1)}, {I});
  const auto tr = dmhe::simulate_linear(m, VectorXd::Zero(2), 50001, dmhe::NoiseSpec{0.3, 0.0, 9});
  std::vector<double> w;
  for (int k = 1; k < 50001; ++k) {
    for (int j = 0; j < 2; ++j) w.push_back(tr.states[k](j));
  }
  CHECK(std::abs(sample_std(w) - 0.3) < 0.02 * 0.3);

  dmhe::GaussianStream s1(5, 0), s2(5, 0), s3(5, 1);
  CHECK(s1.draw(8, 1.0) == s2.draw(8, 1.0));
  CHECK(s1.draw(8, 1.0) != s3.draw(8, 1.0));
  CHECK_THROWS(dmhe::NoiseSpec{-1.0, 0.0, 0}.validate());
}

TEST_CASE("scaling maps") {
  Rng rng(73);
  const VectorXd v = rng.vector(9, 100.0);
  CHECK((dmhe::apply_scaling(dmhe::ScalingMap::identity(9), v).array() == v.array()).all());
  const auto cfg = shipped();
  const auto map = dmhe::ScalingMap::from_reference(cfg.x0);
  CHECK(max_abs(dmhe::apply_scaling(map, cfg.x0) - VectorXd::Ones(9)) < 1e-15);
  for (int t = 0; t < 20; ++t) {
    const VectorXd x = rng.vector(9, 10.0);
    CHECK(max_abs(dmhe::invert_scaling(map, dmhe::apply_scaling(map, x)) - x) < 1e-12);
  }
  VectorXd bad = cfg.x0;
  bad(4) = 0.0;
  CHECK_THROWS(dmhe::ScalingMap::from_reference(bad));
}

TEST_CASE("reactor parameters carry the reference state and round-trip") {
  const auto cfg = shipped();
  REQUIRE(cfg.x0.size() == 9);
  CHECK(cfg.x0(0) == doctest::Approx(0.1939));
  CHECK(cfg.x0(1) == doctest::Approx(0.7404));
  CHECK(cfg.x0(2) == doctest::Approx(528.3482));
  const auto again = dmhe::ReactorSeparatorConfig::parse(cfg.to_yaml());
  CHECK(again.to_yaml() == cfg.to_yaml());
  CHECK(again.Fr == cfg.Fr);
  CHECK(again.heat[1].amplitude == cfg.heat[1].amplitude);
  CHECK((again.x0.array() == cfg.x0.array()).all());
  CHECK_THROWS_AS(dmhe::ReactorSeparatorConfig::parse("volumes: [1.0, -0.5, 1.0]\n"),
                  dmhe::ConfigError);
}

TEST_CASE("null reactor dynamics leave the state unchanged") {
  auto cfg = shipped();
  cfg.F10 = cfg.F20 = cfg.Fr = cfg.Fp = 0.0;
  cfg.k1 = cfg.k2 = 0.0;
  for (auto& h : cfg.heat) h.mean = h.amplitude = 0.0;
  const VectorXd x1 = dmhe::step_reactor_separator(cfg, cfg.x0, 0.0);
  CHECK(max_abs(x1 - cfg.x0) < 1e-12);
}

TEST_CASE("shipped reactor stays physical over a run") {
  const auto cfg = shipped();
  const auto scaling = dmhe::ScalingMap::from_reference(cfg.x0);
  const auto tr = dmhe::simulate_reactor_separator(cfg, cfg.x0, 100, dmhe::NoiseSpec{}, scaling);
  for (int k = 0; k < 100; ++k) {
    const VectorXd x = dmhe::invert_scaling(scaling, tr.states[k]);
    REQUIRE(x.allFinite());
    for (int i = 0; i < 3; ++i) {
      CHECK(x(3 * i) >= -0.05);
      CHECK(x(3 * i) <= 1.05);
      CHECK(x(3 * i + 1) >= -0.05);
      CHECK(x(3 * i + 1) <= 1.05);
      CHECK(x(3 * i + 2) > 0.0);
      // Noise-free outputs are the scaled temperatures.
      CHECK(tr.measurements[k](i) == tr.states[k](3 * i + 2));
    }
  }
}

TEST_CASE("measurement noise enters in scaled coordinates") {
  const auto cfg = shipped();
  const auto scaling = dmhe::ScalingMap::from_reference(cfg.x0);
  const auto tr =
      dmhe::simulate_reactor_separator(cfg, cfg.x0, 400, dmhe::NoiseSpec{0.0, 0.05, 4}, scaling);
  std::vector<double> v;
  for (int k = 0; k < 400; ++k) {
    for (int i = 0; i < 3; ++i) v.push_back(tr.measurements[k](i) - tr.states[k](3 * i + 2));
  }
  CHECK(std::abs(sample_std(v) - 0.05) < 0.1 * 0.05);
}

TEST_CASE("non-finite reactor derivatives name the vessel") {
  const auto cfg = shipped();
  VectorXd x = cfg.x0;
  x(5) = std::numeric_limits<double>::quiet_NaN();
  try {
    dmhe::reactor_rhs(cfg, x, 0.0);
    FAIL("expected an evaluation error");
  } catch (const dmhe::EvaluationError& e) {
    CHECK(e.index() == 1);
  }
}
