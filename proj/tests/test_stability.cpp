#include <doctest.h>

#include <cmath>

#include "dmhe/coordinator.hpp"
#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"
#include "dmhe/model_io.hpp"
#include "dmhe/plant.hpp"
#include "dmhe/stability.hpp"
#include "fie_reference.hpp"
#include "test_util.hpp"

using dmhe::testing::max_abs;
using dmhe::testing::Rng;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

dmhe::PartitionedLinearModel scalar_pair(double eps) {
  MatrixXd a(1, 1), b(1, 1), one = MatrixXd::Identity(1, 1);
  a << 0.6;
  b << 0.5;
  const MatrixXd e = MatrixXd::Constant(1, 1, eps);
  return dmhe::PartitionedLinearModel({{a, e}, {e, b}}, {one, one}, {0.1 * one, 0.1 * one},
                                      {0.1 * one, 0.1 * one}, {one, one});
}

dmhe::PartitionedLinearModel without_coupling(const dmhe::PartitionedLinearModel& m) {
  dmhe::BlockGrid A = m.A_blocks();
  for (size_t i = 0; i < A.size(); ++i)
    for (size_t l = 0; l < A.size(); ++l)
      if (i != l) A[i][l].setZero();
  return dmhe::PartitionedLinearModel(A, m.C_blocks(), m.Q_blocks(), m.R_blocks(), m.P0_blocks());
}

VectorXd stack(const std::vector<VectorXd>& parts) {
  int n = 0;
  for (const auto& v : parts) n += static_cast<int>(v.size());
  VectorXd out(n);
  int r = 0;
  for (const auto& v : parts) {
    out.segment(r, v.size()) = v;
    r += static_cast<int>(v.size());
  }
  return out;
}

struct TransitSetup {
  dmhe::EstimationWindow win;
  MatrixXd P_arrival;
  dmhe::testing::DenseLeastSquares reference{1, 1};
};

// Window of estimator i at k = N with a random arrival weight, plus the
// same window problem built as a dense least-squares reference.
TransitSetup transit_setup(Rng& rng, const dmhe::PartitionedLinearModel& m, int i, int N) {
  const auto& p = m.partition();
  TransitSetup t;
  t.win.i = i;
  t.win.k = N;
  t.win.N = N;
  t.win.rows = dmhe::measurement_rows(p, i, true);
  std::vector<VectorXd> xt;
  for (int j = 0; j <= N; ++j) {
    t.win.ys.push_back(rng.vector(p.ny()));
    xt.push_back(rng.vector(p.nx()));
  }
  t.win.x_tilde.assign(xt.begin(), xt.begin() + N);
  t.P_arrival = rng.spd(p.state_dim(i));
  const VectorXd center = rng.vector(p.state_dim(i));
  t.win.arrival = dmhe::ArrivalPrior{t.P_arrival, center};
  auto P0 = m.P0_blocks();
  P0[i] = t.P_arrival;
  const auto mw = m.with_weights(m.Q_blocks(), m.R_blocks(), P0);
  t.reference = dmhe::testing::distributed_fie(mw, i, t.win.ys, xt, center, N, N);
  return t;
}

}  // namespace

TEST_CASE("decoupled systems have a vanishing error matrix") {
  Rng rng(61);
  const auto m = without_coupling(dmhe::testing::random_model(rng, {2, 2}, {1, 1}, 0.3));
  const auto sel = dmhe::DerivedSelectors::compute(m);
  for (int N : {2, 4}) {
    const auto cm = dmhe::build_collective(m, sel, N);
    CHECK(max_abs(cm.M2) == 0.0);
    // Γ still carries each neighbor's own dynamics in the neighbor-output
    // rows, which O never touches.
    CHECK(max_abs(cm.O.transpose() * cm.Gamma) == 0.0);
    const auto sr = dmhe::error_matrix_rho(cm);
    CHECK(sr.rho == 0.0);
    CHECK(max_abs(sr.M) == 0.0);
  }
}

TEST_CASE("window of one gives the single-block matrices") {
  Rng rng(62);
  const auto m = dmhe::testing::random_model(rng, {2, 1}, {1, 1}, 0.3);
  const auto sel = dmhe::DerivedSelectors::compute(m);
  const auto cm = dmhe::build_collective(m, sel, 1);
  CHECK(max_abs(cm.O - cm.C_bold * cm.A_star) == 0.0);
  CHECK(max_abs(cm.M1 - sel.A_d) == 0.0);
  CHECK(max_abs(cm.Gamma - cm.C_bold * cm.A_tilde) == 0.0);
  CHECK(max_abs(cm.M2 - sel.A_r) == 0.0);
}

TEST_CASE("collective matrices reproduce a simulated error recursion") {
  Rng rng(63);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = dmhe::testing::random_model(rng, {2, 1}, {1, 1}, 0.4);
    const auto& p = m.partition();
    const auto sel = dmhe::DerivedSelectors::compute(m);
    const int N = 3, nx = p.nx();
    const MatrixXd A = m.A(), C = m.C();
    const VectorXd e0 = rng.vector(nx);  // own errors at the window start
    std::vector<VectorXd> et;            // neighbor-estimate errors
    for (int j = 0; j < N; ++j) et.push_back(rng.vector(nx));

    // Each estimator propagates its own error with the neighbor errors as
    // drive; its predicted-output residual sees the composite error.
    VectorXd own = e0;
    std::vector<VectorXd> E, V(N);
    for (int r = 0; r < N; ++r) {
      std::vector<VectorXd> residuals;
      VectorXd next(nx);
      for (int i = 0; i < p.n(); ++i) {
        VectorXd comp = et[r];
        p.set_local_state(comp, i, p.local_state(own, i));
        residuals.push_back(C * A * comp);
        p.set_local_state(next, i, p.local_state(VectorXd(A * comp), i));
      }
      V[r] = stack(residuals);
      own = next;
      E.push_back(own);
    }
    const auto cm = dmhe::build_collective(m, sel, N);
    CHECK(max_abs(cm.O * e0 + cm.Gamma * stack(et) - stack(V)) < 1e-8);
    CHECK(max_abs(cm.M1 * e0 + cm.M2 * stack(et) - stack(E)) < 1e-8);
  }
}

TEST_CASE("spectral radius shrinks with the coupling") {
  std::vector<double> rho;
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    const auto m = scalar_pair(eps);
    rho.push_back(
        dmhe::error_matrix_rho(dmhe::build_collective(m, dmhe::DerivedSelectors::compute(m), 2))
            .rho);
  }
  CHECK(rho[0] > rho[1]);
  CHECK(rho[1] > rho[2]);
  CHECK(rho[2] < 1e-2);
}

TEST_CASE("unobservable stacks are refused") {
  const auto m0 = scalar_pair(0.1);
  const MatrixXd z = MatrixXd::Zero(1, 1);
  const dmhe::PartitionedLinearModel blind(m0.A_blocks(), {z, z}, m0.Q_blocks(), m0.R_blocks(),
                                           m0.P0_blocks());
  CHECK_THROWS_AS(dmhe::error_matrix_rho(
                      dmhe::build_collective(blind, dmhe::DerivedSelectors::compute(blind), 2)),
                  dmhe::RankError);
  const auto report = dmhe::stability_report(blind, 2, nullptr);
  CHECK_FALSE(report.rho_available);
  CHECK(dmhe::format_stability_report(report).find("rho: unavailable") != std::string::npos);
}

TEST_CASE("transit Hessian base case and shape") {
  Rng rng(64);
  const auto m = dmhe::testing::random_model(rng, {2, 1}, {1, 1}, 0.3);
  const auto sel = dmhe::DerivedSelectors::compute(m);
  const MatrixXd P = rng.spd(2);
  const auto t1 = dmhe::build_transit_hessian(m, sel, P, 1, 0);
  CHECK(max_abs(t1.C4 - MatrixXd::Identity(2, 2)) == 0.0);
  CHECK(max_abs(t1.H - P.inverse()) < 1e-12);
  for (int N : {2, 3, 5}) {
    const auto t = dmhe::build_transit_hessian(m, sel, P, N, 0);
    CHECK(t.H.rows() == 2 * N);
    CHECK(dmhe::min_eigenvalue(t.H) >= -1e-10);
  }
}

TEST_CASE("pinned transit cost is the quadratic around the unconstrained window") {
  Rng rng(65);
  const auto m = dmhe::testing::random_model(rng, {2, 1}, {1, 1}, 0.3);
  const auto sel = dmhe::DerivedSelectors::compute(m);
  const int N = 3;
  for (int i = 0; i < 2; ++i) {
    const int d = m.partition().state_dim(i);
    const auto t = transit_setup(rng, m, i, N);
    const auto sol = dmhe::solve_local_mhe_linear(t.win, m, sel, {});
    const VectorXd xu = stack({sol.x.begin() + 1, sol.x.end()});
    const auto th = dmhe::build_transit_hessian(
        m, sel, dmhe::transit_entry_weight(m, sel, t.P_arrival, i), N, i);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<VectorXd> z;
      for (int r = 0; r < N; ++r) z.push_back(rng.vector(d, 2.0));
      const VectorXd zs = stack(z);
      const double brute = t.reference.min_over_first(zs);
      const double quad = (zs - xu).dot(th.H * (zs - xu)) + sol.objective;
      const double eval = dmhe::transit_cost_eval(z, t.win, m, sel, {}, false);
      CHECK(std::abs(eval - brute) < 1e-7 * std::max(1.0, brute));
      CHECK(std::abs(quad - brute) < 1e-7 * std::max(1.0, brute));
    }
    std::vector<VectorXd> at_opt(sol.x.begin() + 1, sol.x.end());
    CHECK(dmhe::transit_cost_eval(at_opt, t.win, m, sel, {}, false) ==
          doctest::Approx(sol.objective).epsilon(1e-9));
  }
}

TEST_CASE("constrained transit cost dominates the quadratic lower bound") {
  Rng rng(66);
  const auto m = dmhe::testing::random_model(rng, {2, 1}, {1, 1}, 0.3);
  const auto sel = dmhe::DerivedSelectors::compute(m);
  const int N = 3;
  for (int i = 0; i < 2; ++i) {
    const int d = m.partition().state_dim(i);
    dmhe::ConstraintSet cs;
    cs.x_lower = VectorXd::Constant(d, -0.2);
    cs.x_upper = VectorXd::Constant(d, 0.2);
    cs.constrain_all_window = true;
    const auto t = transit_setup(rng, m, i, N);
    const auto sol = dmhe::solve_local_mhe_linear(t.win, m, sel, cs);
    const VectorXd xs = stack({sol.x.begin() + 1, sol.x.end()});
    const auto th = dmhe::build_transit_hessian(
        m, sel, dmhe::transit_entry_weight(m, sel, t.P_arrival, i), N, i);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<VectorXd> z;
      for (int r = 0; r < N; ++r) z.push_back(rng.vector(d, 0.2));
      const VectorXd zs = stack(z);
      const double bound = (zs - xs).dot(th.H * (zs - xs)) + sol.objective;
      CHECK(dmhe::transit_cost_eval(z, t.win, m, sel, cs, true) - bound >= -1e-8);
    }
    std::vector<VectorXd> outside(N, VectorXd::Constant(d, 5.0));
    CHECK_THROWS(dmhe::transit_cost_eval(outside, t.win, m, sel, cs, true));
  }
}

TEST_CASE("comparison matrices") {
  Rng rng(67);
  const auto m = dmhe::testing::random_model(rng, {2, 1, 2}, {1, 1, 1}, 0.3);
  const auto& p = m.partition();
  const auto sel = dmhe::DerivedSelectors::compute(m);
  const int N = 3, n = p.n();
  std::vector<MatrixXd> P;
  for (int i = 0; i < n; ++i) P.push_back(rng.spd(p.state_dim(i)));
  const auto W = dmhe::build_W(m, sel, P, N);
  const MatrixXd A = m.A(), C = m.C(), Ri = m.R().inverse();
  for (int l = 0; l < n; ++l) {
    const int d = p.state_dim(l), ol = p.state_offset(l);
    MatrixXd S = MatrixXd::Zero(d, d);
    for (int i = 0; i < n; ++i) {
      MatrixXd At = A;
      At.middleCols(p.state_offset(i), p.state_dim(i)).setZero();
      const MatrixXd G = C * At.middleCols(ol, d);
      S += G.transpose() * Ri * G;
      if (i != l) {
        const MatrixXd B = m.A_block(i, l);
        S += B.transpose() * m.Q_block(i).inverse() * B;
      }
    }
    S *= n;
    const MatrixXd Cl = C.middleCols(ol, d);
    CHECK(max_abs(W[l].topLeftCorner(d, d) - (P[l].inverse() + Cl.transpose() * Ri * Cl + S)) <
          1e-9);
    for (int r = 1; r < N; ++r) CHECK(max_abs(W[l].block(r * d, r * d, d, d) - S) < 1e-9);
    CHECK(max_abs(W[l] - W[l].transpose()) == 0.0);
    CHECK(dmhe::min_eigenvalue(W[l]) >= -1e-10);
  }

  // Without coupling only the neighbors' predicted outputs remain: each of
  // the n − 1 other estimators sees C_l A_ll through Ã.
  const auto dec = without_coupling(m);
  const auto Wd = dmhe::build_W(dec, dmhe::DerivedSelectors::compute(dec), P, N);
  for (int l = 0; l < n; ++l) {
    const int d = p.state_dim(l);
    const MatrixXd G = m.C_block(l) * m.A_block(l, l);
    const MatrixXd S = n * (n - 1) * G.transpose() * m.R_block(l).inverse() * G;
    for (int r = 1; r < N; ++r) CHECK(max_abs(Wd[l].block(r * d, r * d, d, d) - S) < 1e-9);
  }

  const dmhe::PartitionedLinearModel single({{m.A_block(0, 0)}}, {m.C_block(0)}, {m.Q_block(0)},
                                            {m.R_block(0)}, {m.P0_block(0)});
  const auto W1 = dmhe::build_W(single, dmhe::DerivedSelectors::compute(single), {P[0]}, N);
  const MatrixXd C0 = m.C_block(0);
  MatrixXd expect = MatrixXd::Zero(2 * N, 2 * N);
  expect.topLeftCorner(2, 2) = P[0].inverse() + C0.transpose() * m.R_block(0).inverse() * C0;
  CHECK(max_abs(W1[0] - expect) < 1e-9);
}

TEST_CASE("assumption check verdicts agree with sampling") {
  Rng rng(68);
  const MatrixXd H = rng.spd(4);
  CHECK(dmhe::check_assumption1(MatrixXd::Zero(4, 4), H).holds);
  CHECK(dmhe::check_assumption1(H, H).holds);
  CHECK_THROWS_AS(dmhe::check_assumption1(MatrixXd::Zero(3, 3), H), std::invalid_argument);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd Hs = 0.01 * rng.spd(3, 0.01);
    const VectorXd v = rng.vector(3);
    const bool planted = trial % 2 == 0;
    const MatrixXd W = planted ? MatrixXd(Hs + 10.0 * v * v.transpose()) : MatrixXd(0.5 * Hs);
    const auto verdict = dmhe::check_assumption1(W, Hs);
    double sampled = std::numeric_limits<double>::infinity();
    for (int s = 0; s < 50; ++s) {
      const VectorXd x = rng.vector(3);
      sampled = std::min(sampled, x.dot((Hs - W) * x) / x.squaredNorm());
    }
    CHECK(verdict.holds == !planted);
    CHECK((sampled >= -verdict.tolerance) == verdict.holds);
    CHECK(sampled >= verdict.min_eigenvalue - 1e-12);
  }
}

TEST_CASE("shipped coupled model: prior check, radius and contraction rate") {
  const auto m = dmhe::load_linear_model(std::string(DMHE_DATA_DIR) + "/linear_model.yaml");
  const int N = 4;
  VectorXd x0(4);
  x0 << 1.0, -0.5, 0.8, 0.3;
  const auto trace = dmhe::simulate_linear(m, x0, 60, dmhe::NoiseSpec{});
  dmhe::CoordinatorOptions opt;
  opt.variant = dmhe::VariantConfig::make(dmhe::Variant::kProposed, N);
  dmhe::Coordinator c(m, VectorXd::Zero(4), opt);
  const auto rec = dmhe::run_horizon(c, trace, 60);
  const auto report = dmhe::stability_report(m, N, &rec);
  REQUIRE(report.rho_available);
  CHECK(report.rho < 1.0);
  CHECK(report.assumption1_holds_at_prior());
  CHECK(report.samples.size() == 2 * (60 - N));

  // Log-linear fit of the error norm while it is above round-off.
  std::vector<double> ks, logs;
  for (int k = 0; k < 60; ++k) {
    const double e = (rec.estimates[k] - rec.truth[k]).norm();
    if (e < 1e-10) break;
    ks.push_back(k);
    logs.push_back(std::log(e));
  }
  REQUIRE(ks.size() >= 5);
  const double nk = static_cast<double>(ks.size());
  double mk = 0, ml = 0;
  for (size_t t = 0; t < ks.size(); ++t) {
    mk += ks[t] / nk;
    ml += logs[t] / nk;
  }
  double sxy = 0, sxx = 0;
  for (size_t t = 0; t < ks.size(); ++t) {
    sxy += (ks[t] - mk) * (logs[t] - ml);
    sxx += (ks[t] - mk) * (ks[t] - mk);
  }
  const double rate = std::exp(sxy / sxx);
  CHECK(rate < 1.0);
  if (report.assumption1_holds()) {
    CHECK(rate <= report.rho + 0.1);
  } else {
    MESSAGE("assumption 1 fails along the run (worst margin "
            << report.worst_margin() << "); measured rate " << rate << ", rho " << report.rho);
  }

  const std::string text = dmhe::format_stability_report(report);
  CHECK(text.find("rho_below_one: true") != std::string::npos);
  CHECK(text.find("assumption1_prior_holds: true") != std::string::npos);
}

TEST_CASE("window increments cover the disturbance and residual norms") {
  Rng rng(69);
  const auto m = dmhe::testing::random_model(rng, {2, 2}, {1, 1}, 0.2);
  const VectorXd x0 = rng.vector(4);
  const auto trace = dmhe::simulate_linear(m, x0, 30, dmhe::NoiseSpec{});
  dmhe::CoordinatorOptions opt;
  opt.variant = dmhe::VariantConfig::make(dmhe::Variant::kProposed, 3);
  dmhe::Coordinator c(m, x0 + 0.2 * rng.vector(4), opt);
  for (int k = 0; k < 30; ++k) {
    const auto r = c.advance(trace.measurements[k]);
    if (k == 0) continue;
    double norms = 0.0;
    for (int i = 0; i < 2; ++i) {
      const auto& sol = r.solutions[i];
      const auto Ri = dmhe::select_block(m.R(), dmhe::measurement_rows(m.partition(), i, true));
      for (const auto& w : sol.w) norms += dmhe::testing::weighted_sq(w, m.Q_block(i));
      for (const auto& v : sol.v) norms += dmhe::testing::weighted_sq(v, Ri);
    }
    const auto& L = c.ledger().collective;
    CHECK(L[k] - L[k - 1] >= norms - 1e-8);
  }
}
