#include <doctest.h>

#include <cmath>
#include <limits>

#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"
#include "dmhe/model_io.hpp"
#include "dmhe/plant.hpp"
#include "dmhe/reactor_separator.hpp"
#include "dmhe/system_model.hpp"
#include "test_util.hpp"

using dmhe::testing::max_abs;
using dmhe::testing::Rng;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }

dmhe::PartitionedLinearModel scalar_pair(double a11, double a12, double a21, double a22) {
  dmhe::BlockGrid A = {{scalar(a11), scalar(a12)}, {scalar(a21), scalar(a22)}};
  std::vector<MatrixXd> one = {scalar(1), scalar(1)};
  return dmhe::PartitionedLinearModel(A, one, one, one, one);
}

}  // namespace

TEST_CASE("partition offsets and local maps") {
  dmhe::Partition p({2, 1, 3}, {1, 2, 1}, {{2}, {0, 2}, {}});
  CHECK(p.nx() == 6);
  CHECK(p.ny() == 4);
  CHECK(p.state_offset(2) == 3);
  CHECK(p.output_offset(2) == 3);
  CHECK(p.neighbor_dim(1) == 5);
  VectorXd x = VectorXd::LinSpaced(6, 0, 5);
  CHECK(p.local_state(x, 2) == VectorXd::LinSpaced(3, 3, 5));
  VectorXd packed(5);
  packed << 0, 1, 3, 4, 5;
  CHECK(p.pack_neighbors(x, 1) == packed);
  p.set_local_state(x, 1, VectorXd::Constant(1, -1.0));
  CHECK(x(2) == -1.0);
  CHECK(p.output_rows(1) == std::vector<int>{1, 2});

  CHECK_THROWS_AS(dmhe::Partition({1, 1}, {1, 1}, {{0}, {}}), std::invalid_argument);
  CHECK_THROWS_AS(dmhe::Partition({1, 1}, {1}), std::invalid_argument);
  CHECK_THROWS_AS(dmhe::Partition({1, 0}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(dmhe::Partition({1, 1}, {1, 1}, {{1, 1}, {}}), std::invalid_argument);
  CHECK_THROWS_AS(dmhe::Partition({1, 1}, {1, 1}, {{3}, {}}), std::invalid_argument);
}

TEST_CASE("global assembly follows the block layout") {
  const auto m = scalar_pair(1, 2, 3, 4);
  MatrixXd expected(2, 2);
  expected << 1, 2, 3, 4;
  CHECK(dmhe::assemble_global(m).A == expected);
  CHECK(dmhe::assemble_global(m).C == MatrixXd::Identity(2, 2));
  CHECK(m.partition().neighbors(0) == std::vector<int>{1});

  const auto single = dmhe::PartitionedLinearModel({{scalar(0.5)}}, {scalar(2)}, {scalar(1)},
                                                   {scalar(1)}, {scalar(1)});
  CHECK(dmhe::assemble_global(single).A == scalar(0.5));
  CHECK(dmhe::assemble_global(single).C == scalar(2));

  const auto decoupled = scalar_pair(0.5, 0, 0, 0.7);
  const auto sel = dmhe::DerivedSelectors::compute(decoupled);
  CHECK(max_abs(sel.A_r) == 0.0);
  CHECK(decoupled.partition().neighbors(0).empty());
}

TEST_CASE("selectors reassemble the global matrices") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = dmhe::testing::random_model(rng, {2, 3, 1}, {1, 2, 1}, 0.3);
    const auto g = dmhe::assemble_global(m);
    const auto sel = dmhe::DerivedSelectors::compute(m);
    const auto& p = m.partition();
    CHECK(sel.A_d + sel.A_r == g.A);
    CHECK(max_abs(m.R() - dmhe::block_diagonal(m.R_blocks())) == 0.0);
    for (int i = 0; i < p.n(); ++i) {
      const int o = p.state_offset(i), d = p.state_dim(i);
      CHECK(sel.A_col[i] == g.A.middleCols(o, d));
      CHECK(sel.C_col[i] == g.C.middleCols(o, d));
      MatrixXd reassembled = sel.A_tilde[i];
      CHECK(max_abs(reassembled.middleCols(o, d)) == 0.0);
      reassembled.middleCols(o, d) = sel.A_star(i);
      CHECK(reassembled == g.A);
      MatrixXd c_re = sel.C_tilde[i];
      CHECK(max_abs(c_re.middleCols(o, d)) == 0.0);
      c_re.middleCols(o, d) = sel.C_star(i);
      CHECK(c_re == g.C);
      // C_i^* is nonzero only in subsystem i's output rows.
      const MatrixXd cs = sel.C_star(i);
      for (int r = 0; r < p.ny(); ++r) {
        const bool own = r >= p.output_offset(i) && r < p.output_offset(i) + p.output_dim(i);
        if (!own) CHECK(cs.row(r).cwiseAbs().maxCoeff() == 0.0);
      }
    }
  }
}

TEST_CASE("model construction rejects bad blocks") {
  dmhe::BlockGrid A = {{scalar(1), MatrixXd::Zero(1, 2)}, {scalar(1), scalar(1)}};
  std::vector<MatrixXd> one = {scalar(1), scalar(1)};
  CHECK_THROWS_AS(dmhe::PartitionedLinearModel(A, one, one, one, one), std::invalid_argument);
  dmhe::BlockGrid ok = {{scalar(1), scalar(0)}, {scalar(0), scalar(1)}};
  std::vector<MatrixXd> bad_q = {scalar(1), scalar(-1)};
  CHECK_THROWS(dmhe::PartitionedLinearModel(ok, one, bad_q, one, one));
}

TEST_CASE("linearization of linear and scalar maps") {
  Rng rng(22);
  const auto m = dmhe::testing::random_model(rng, {2, 2}, {1, 1}, 0.2);
  const auto sys = dmhe::as_nonlinear(m);
  const VectorXd x = rng.vector(4);
  const auto lin = dmhe::linearize(sys, 0, x);
  CHECK(max_abs(lin.A - m.A()) < 1e-12);
  CHECK(max_abs(lin.C - m.C()) < 1e-12);
  const auto fd = dmhe::linearize(sys.without_analytic_jacobians(), 0, x);
  CHECK(max_abs(fd.A - m.A()) < 1e-6);
  CHECK(max_abs(fd.C - m.C()) < 1e-6);

  dmhe::NonlinearSubsystemModel sq;
  sq.f = [](int, const VectorXd& xi, const VectorXd&) -> VectorXd { return xi.array().square(); };
  sq.h = [](const VectorXd& xi) -> VectorXd { return xi; };
  dmhe::NonlinearSystem s1(dmhe::Partition({1}, {1}), {sq});
  const auto l1 = dmhe::linearize(s1, 0, VectorXd::Constant(1, 3.0));
  CHECK(l1.A(0, 0) == doctest::Approx(6.0).epsilon(1e-6));
}

TEST_CASE("linearization keeps undeclared couplings exactly zero") {
  // f_0 reads x_2 only; subsystem 1's coupling into 0 is not declared.
  dmhe::Partition p({1, 1, 1}, {1, 1, 1}, {{2}, {0}, {1}});
  std::vector<dmhe::NonlinearSubsystemModel> subs(3);
  for (int i = 0; i < 3; ++i) {
    subs[i].f = [](int, const VectorXd& xi, const VectorXd& Xi) -> VectorXd {
      return (0.5 * xi.array() + Xi.array().sin()).matrix();
    };
    subs[i].h = [](const VectorXd& xi) -> VectorXd { return xi.array().cube(); };
  }
  dmhe::NonlinearSystem sys(p, subs);
  const VectorXd x = VectorXd::LinSpaced(3, 0.1, 0.3);
  const auto lin = dmhe::linearize(sys, 0, x);
  CHECK(lin.A(0, 1) == 0.0);
  CHECK(lin.A(1, 2) == 0.0);
  CHECK(lin.A(2, 0) == 0.0);
  CHECK(lin.A(0, 2) == doctest::Approx(std::cos(0.3)).epsilon(1e-8));
  CHECK(lin.C(0, 1) == 0.0);
  CHECK(lin.C(1, 1) == doctest::Approx(3 * 0.2 * 0.2).epsilon(1e-8));
}

TEST_CASE("central differences are second order") {
  auto fn = [](const VectorXd& x) -> VectorXd {
    VectorXd y(2);
    y << std::sin(x(0)) * std::exp(x(1)), x(0) * x(0) * x(0);
    return y;
  };
  VectorXd x(2);
  x << 0.7, -0.3;
  MatrixXd exact(2, 2);
  exact << std::cos(0.7) * std::exp(-0.3), std::sin(0.7) * std::exp(-0.3), 3 * 0.49, 0;
  for (double h : {1e-2, 5e-3, 2e-3}) {
    const double e1 = max_abs(dmhe::central_difference_jacobian(fn, x, 0.0, h) - exact);
    const double e2 = max_abs(dmhe::central_difference_jacobian(fn, x, 0.0, h / 2) - exact);
    const double ratio = e1 / e2;
    CHECK(ratio >= 3.0);
    CHECK(ratio <= 5.0);
  }
}

TEST_CASE("non-finite evaluations carry the coordinate") {
  auto fn = [](const VectorXd& x) -> VectorXd {
    VectorXd y = x;
    if (x(1) > 1.0) y(0) = std::numeric_limits<double>::quiet_NaN();
    return y;
  };
  VectorXd x(3);
  x << 0.0, 1.0, 0.0;
  try {
    dmhe::central_difference_jacobian(fn, x);
    FAIL("expected an evaluation error");
  } catch (const dmhe::EvaluationError& e) {
    CHECK(e.index() == 1);
  }

  dmhe::Partition p({1, 2}, {1, 1}, {{}, {}});
  std::vector<dmhe::NonlinearSubsystemModel> subs(2);
  subs[0].f = [](int, const VectorXd& xi, const VectorXd&) -> VectorXd { return xi; };
  subs[0].h = [](const VectorXd& xi) -> VectorXd { return xi; };
  subs[1].f = [](int, const VectorXd& xi, const VectorXd&) -> VectorXd {
    VectorXd y = xi;
    if (xi(1) > 5.0) y(0) = std::numeric_limits<double>::infinity();
    return y;
  };
  subs[1].h = [](const VectorXd& xi) -> VectorXd { return xi.head(1); };
  dmhe::NonlinearSystem sys(p, subs);
  VectorXd g(3);
  g << 0.0, 0.0, 5.0;
  try {
    dmhe::linearize(sys, 0, g);
    FAIL("expected an evaluation error");
  } catch (const dmhe::EvaluationError& e) {
    CHECK(e.index() == 2);
  }
}

TEST_CASE("registration validates dimensions and determinism") {
  dmhe::Partition p({2}, {1});
  dmhe::NonlinearSubsystemModel bad;
  bad.f = [](int, const VectorXd& xi, const VectorXd&) -> VectorXd { return xi.head(1); };
  bad.h = [](const VectorXd& xi) -> VectorXd { return xi.head(1); };
  CHECK_THROWS_AS(dmhe::NonlinearSystem(p, {bad}), std::invalid_argument);

  dmhe::NonlinearSubsystemModel wrong_h;
  wrong_h.f = [](int, const VectorXd& xi, const VectorXd&) -> VectorXd { return xi; };
  wrong_h.h = [](const VectorXd& xi) -> VectorXd { return xi; };
  CHECK_THROWS_AS(dmhe::NonlinearSystem(p, {wrong_h}), std::invalid_argument);

  auto counter = std::make_shared<int>(0);
  dmhe::NonlinearSubsystemModel noisy;
  noisy.f = [counter](int, const VectorXd& xi, const VectorXd&) -> VectorXd {
    return xi * static_cast<double>(++*counter);
  };
  noisy.h = [](const VectorXd& xi) -> VectorXd { return xi.head(1); };
  CHECK_THROWS_AS(dmhe::NonlinearSystem(p, {noisy}), std::invalid_argument);
}

TEST_CASE("reactor Jacobians agree with finite differences") {
  const auto cfg =
      dmhe::ReactorSeparatorConfig::load(std::string(DMHE_DATA_DIR) + "/reactor_separator.yaml");
  const auto scaling = dmhe::ScalingMap::from_reference(cfg.x0);
  const auto sys = dmhe::reactor_separator_system(cfg, scaling);
  for (double factor : {1.0, 1.1}) {
    const VectorXd xs = factor * dmhe::apply_scaling(scaling, cfg.x0);
    for (int k : {0, 17}) {
      const auto analytic = dmhe::linearize(sys, k, xs);
      const auto fd = dmhe::linearize(sys.without_analytic_jacobians(), k, xs);
      CHECK(max_abs(analytic.A - fd.A) <= 1e-4 * max_abs(analytic.A));
      CHECK(max_abs(analytic.C - fd.C) <= 1e-4 * max_abs(analytic.C));
    }
  }
}

TEST_CASE("linear model files round-trip") {
  Rng rng(23);
  const auto m = dmhe::testing::random_model(rng, {2, 1}, {1, 1}, 0.2);
  const auto back = dmhe::parse_linear_model(dmhe::linear_model_to_yaml(m));
  CHECK(max_abs(back.A() - m.A()) == 0.0);
  CHECK(max_abs(back.C() - m.C()) == 0.0);
  CHECK(max_abs(back.Q() - m.Q()) == 0.0);
  CHECK(max_abs(back.R() - m.R()) == 0.0);
  CHECK(max_abs(back.P0() - m.P0()) == 0.0);

  const auto shipped = dmhe::load_linear_model(std::string(DMHE_DATA_DIR) + "/linear_model.yaml");
  CHECK(shipped.n() == 2);
  CHECK(shipped.partition().nx() == 4);
}

TEST_CASE("model file errors name the offending key") {
  auto message = [](const std::string& text) {
    try {
      dmhe::parse_linear_model(text);
    } catch (const dmhe::ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  const std::string head = "partition: {state_dims: [1], output_dims: [1]}\n";
  CHECK(message("A: []\n").find("partition") != std::string::npos);
  CHECK(
      message(head + "A: [{row: 0, col: 0, data: [[1, 2]]}]\nC: [[[1]]]\nQ: [1]\nR: [1]\nP0: [1]\n")
          .find("A[0].data") != std::string::npos);
  CHECK(message(head + "A: [{row: 0, col: 0, data: [[1]]}]\nC: [[[1]]]\nQ: [1]\nR: [1]\n")
            .find("P0") != std::string::npos);
  CHECK(message(head + "A: [{row: 0, col: 0, data: [[x]]}]\nC: [[[1]]]\nQ: [1]\nR: [1]\nP0: [1]\n")
            .find("not a number") != std::string::npos);
  CHECK(message(head +
                "A: [{row: 0, col: 0, data: [[1]]}]\nC: [[[1]]]\nQ: [-1]\nR: [1]\nP0: [1]\n") !=
        "");
  CHECK(message("[unbalanced") != "");
}
