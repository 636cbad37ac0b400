#include <doctest.h>

#include <cmath>
#include <limits>

#include "dmhe/coordinator.hpp"
#include "dmhe/errors.hpp"
#include "dmhe/model_io.hpp"
#include "dmhe/plant.hpp"
#include "fie_reference.hpp"
#include "test_util.hpp"

using dmhe::testing::max_abs;
using dmhe::testing::Rng;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

dmhe::CoordinatorOptions options(dmhe::Variant v, int N) {
  dmhe::CoordinatorOptions o;
  o.variant = dmhe::VariantConfig::make(v, N);
  return o;
}

std::vector<VectorXd> run(const dmhe::PartitionedLinearModel& m, const VectorXd& x_bar0,
                          const std::vector<VectorXd>& ys, dmhe::CoordinatorOptions o) {
  dmhe::Coordinator c(m, x_bar0, std::move(o));
  std::vector<VectorXd> out;
  for (const auto& y : ys) out.push_back(c.advance(y).estimate);
  return out;
}

dmhe::PartitionedLinearModel decoupled(Rng& rng) {
  auto m = dmhe::testing::random_model(rng, {2, 2}, {1, 1}, 0.0);
  dmhe::BlockGrid A = m.A_blocks();
  A[0][1].setZero();
  A[1][0].setZero();
  return dmhe::PartitionedLinearModel(A, m.C_blocks(), m.Q_blocks(), m.R_blocks(), m.P0_blocks());
}

}  // namespace

TEST_CASE("decoupled subsystems behave as independent estimators") {
  Rng rng(51);
  const auto m = decoupled(rng);
  const auto& p = m.partition();
  const VectorXd x0 = rng.vector(4), xb = rng.vector(4);
  const auto trace = dmhe::simulate_linear(m, x0, 25, dmhe::NoiseSpec{0.1, 0.1, 5});
  const auto joint = run(m, xb, trace.measurements, options(dmhe::Variant::kProposed, 3));
  for (int i = 0; i < 2; ++i) {
    const dmhe::PartitionedLinearModel single({{m.A_block(i, i)}}, {m.C_block(i)}, {m.Q_block(i)},
                                              {m.R_block(i)}, {m.P0_block(i)});
    std::vector<VectorXd> ys;
    for (const auto& y : trace.measurements) ys.push_back(p.local_output(y, i));
    const auto alone = run(single, p.local_state(xb, i), ys, options(dmhe::Variant::kProposed, 3));
    for (size_t k = 0; k < ys.size(); ++k) {
      CHECK(max_abs(p.local_state(joint[k], i) - alone[k]) < 1e-10);
    }
  }
}

TEST_CASE("noise-free runs from the true state stay exact") {
  Rng rng(52);
  const auto m = dmhe::testing::random_model(rng, {2, 1, 2}, {1, 1, 1}, 0.2);
  const VectorXd x0 = rng.vector(5);
  const auto trace = dmhe::simulate_linear(m, x0, 30, dmhe::NoiseSpec{});
  for (auto v : {dmhe::Variant::kProposed, dmhe::Variant::kDmhe1, dmhe::Variant::kDmhe2,
                 dmhe::Variant::kDmhe3}) {
    const auto est = run(m, x0, trace.measurements, options(v, 4));
    for (size_t k = 0; k < est.size(); ++k) {
      CHECK(max_abs(est[k] - trace.states[k]) < 1e-9);
    }
  }
}

TEST_CASE("the first instant is a single fusion of prior and measurement") {
  Rng rng(53);
  const auto m = dmhe::testing::random_model(rng, {2, 2}, {1, 1}, 0.3);
  const auto& p = m.partition();
  const VectorXd xb = rng.vector(4), y0 = rng.vector(2);
  const auto est = run(m, xb, {y0}, options(dmhe::Variant::kProposed, 4));
  const MatrixXd C = m.C(), R = m.R();
  for (int i = 0; i < 2; ++i) {
    const MatrixXd Cc = C.middleCols(p.state_offset(i), 2), P0 = m.P0_block(i);
    const MatrixXd K = P0 * Cc.transpose() * (Cc * P0 * Cc.transpose() + R).inverse();
    const VectorXd ref = p.local_state(xb, i) + K * (y0 - C * xb);
    CHECK(max_abs(p.local_state(est[0], i) - ref) < 1e-12);
  }
}

TEST_CASE("windowed estimates equal the full-information estimate on the same exchange") {
  Rng rng(54);
  const auto m = dmhe::testing::random_model(rng, {2, 2}, {1, 1}, 0.25);
  const auto& p = m.partition();
  const VectorXd x0 = rng.vector(4), xb = rng.vector(4);
  const auto trace = dmhe::simulate_linear(m, x0, 30, dmhe::NoiseSpec{0.1, 0.1, 9});
  const int N = 3;
  dmhe::Coordinator c(m, xb, options(dmhe::Variant::kProposed, N));
  c.set_record_snapshots(true);
  dmhe::Coordinator oracle(m, xb, options(dmhe::Variant::kFieOracle, N));
  double worst = 0.0, worst_variant = 0.0;
  for (int k = 0; k < 30; ++k) {
    const VectorXd est = c.advance(trace.measurements[k]).estimate;
    worst_variant =
        std::max(worst_variant, max_abs(est - oracle.advance(trace.measurements[k]).estimate));
    const auto& snap = c.snapshot_history().back();
    std::vector<VectorXd> xt = snap.states;
    xt.push_back(VectorXd::Zero(4));  // newest slot never enters
    const std::vector<VectorXd> ys(trace.measurements.begin(), trace.measurements.begin() + k + 1);
    const int s = std::max(0, k - N);
    for (int i = 0; i < 2; ++i) {
      const auto ref = dmhe::testing::distributed_fie(m, i, ys, xt, p.local_state(xb, i), k, k, s);
      worst = std::max(worst, max_abs(p.local_state(est, i) - ref.block(k)));
    }
  }
  CHECK(worst < 1e-8);
  CHECK(worst_variant < 1e-8);
}

TEST_CASE("snapshots are causal and stamped") {
  Rng rng(55);
  const auto m = dmhe::testing::random_model(rng, {1, 2}, {1, 1}, 0.2);
  const auto trace = dmhe::simulate_linear(m, rng.vector(3), 12, dmhe::NoiseSpec{0.1, 0.1, 1});
  dmhe::Coordinator c(m, VectorXd::Zero(3), options(dmhe::Variant::kProposed, 4));
  c.set_record_snapshots(true);
  for (const auto& y : trace.measurements) c.advance(y);
  const auto& h = c.snapshot_history();
  REQUIRE(h.size() == 12);
  for (int k = 0; k < 12; ++k) {
    CHECK(h[k].stamp == k - 1);
    CHECK(static_cast<int>(h[k].states.size()) == std::max(1, k));
    for (int at : h[k].produced_at) CHECK(at <= k - 1);
    CHECK_NOTHROW(h[k].assert_causal());
  }
  auto bad = h[5];
  bad.produced_at.back() = 7;
  CHECK_THROWS_AS(bad.assert_causal(), std::logic_error);
}

TEST_CASE("ledger accumulates and never decreases without noise") {
  Rng rng(56);
  const auto m = dmhe::testing::random_model(rng, {2, 2}, {1, 1}, 0.2);
  const VectorXd x0 = rng.vector(4);
  const auto trace = dmhe::simulate_linear(m, x0, 40, dmhe::NoiseSpec{});
  dmhe::Coordinator c(m, x0 + 0.3 * rng.vector(4), options(dmhe::Variant::kProposed, 4));
  for (const auto& y : trace.measurements) c.advance(y);
  const auto& L = c.ledger();
  REQUIRE(L.collective.size() == 40);
  for (size_t k = 0; k < L.collective.size(); ++k) {
    CHECK(L.collective[k] == doctest::Approx(L.per_subsystem[0][k] + L.per_subsystem[1][k]));
    if (k > 0) CHECK(L.collective[k] - L.collective[k - 1] >= -1e-8);
  }
}

TEST_CASE("parallel and sequential scheduling give identical records") {
  Rng rng(57);
  const auto m = dmhe::testing::random_model(rng, {2, 1, 2}, {1, 1, 1}, 0.3);
  const auto trace = dmhe::simulate_linear(m, rng.vector(5), 25, dmhe::NoiseSpec{0.1, 0.1, 2});
  auto seq = options(dmhe::Variant::kProposed, 4);
  auto par = seq;
  par.parallel = true;
  const auto a = run(m, VectorXd::Zero(5), trace.measurements, seq);
  const auto b = run(m, VectorXd::Zero(5), trace.measurements, par);
  for (size_t k = 0; k < a.size(); ++k) CHECK((a[k].array() == b[k].array()).all());
}

TEST_CASE("variant arrival weights follow their definitions") {
  Rng rng(58);
  const auto m = dmhe::testing::random_model(rng, {2, 2}, {1, 1}, 0.2);
  const auto trace = dmhe::simulate_linear(m, rng.vector(4), 10, dmhe::NoiseSpec{0.1, 0.1, 3});
  const int N = 3;
  for (auto v : {dmhe::Variant::kDmhe1, dmhe::Variant::kDmhe2, dmhe::Variant::kProposed}) {
    dmhe::Coordinator c(m, VectorXd::Zero(4), options(v, N));
    for (int k = 0; k < 10; ++k) {
      const auto r = c.advance(trace.measurements[k]);
      for (int i = 0; i < 2; ++i) {
        if (k <= N) {
          REQUIRE(r.arrivals[i].has_value());
          CHECK(max_abs(r.arrivals[i]->P - m.P0_block(i)) == 0.0);
        } else if (v == dmhe::Variant::kDmhe2) {
          CHECK_FALSE(r.arrivals[i].has_value());
        } else if (v == dmhe::Variant::kDmhe1) {
          CHECK(max_abs(r.arrivals[i]->P - m.P0_block(i)) == 0.0);
        } else {
          CHECK(c.arrival_chain(i) != nullptr);
        }
      }
    }
  }
  dmhe::VariantConfig bad = dmhe::VariantConfig::make(dmhe::Variant::kDmhe2, 4);
  bad.use_neighbor_measurements = true;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(dmhe::parse_variant("dmhe9"), std::invalid_argument);
  CHECK(dmhe::parse_variant("fie-oracle") == dmhe::Variant::kFieOracle);
}

TEST_CASE("a failing local solve leaves the coordinator untouched") {
  const dmhe::Partition p({1, 1}, {1, 1});
  dmhe::NonlinearSubsystemModel healthy{
      [](int, const VectorXd& x, const VectorXd&) -> VectorXd { return 0.5 * x; },
      [](const VectorXd& x) -> VectorXd { return x; }, nullptr, nullptr};
  dmhe::NonlinearSubsystemModel broken = healthy;
  broken.f = [](int k, const VectorXd& x, const VectorXd&) -> VectorXd {
    if (k >= 3) return VectorXd::Constant(1, std::numeric_limits<double>::quiet_NaN());
    return 0.5 * x;
  };
  const dmhe::NonlinearSystem sys(p, {healthy, broken});
  dmhe::NonlinearWeights w{{MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1)},
                           MatrixXd::Identity(2, 2),
                           {MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1)}};
  // Local measurements only, so estimator 0 never evaluates the broken model.
  dmhe::Coordinator c(sys, w, VectorXd::Zero(2), options(dmhe::Variant::kDmhe1, 4));
  for (int k = 0; k < 4; ++k) c.advance(VectorXd::Constant(2, 0.1));
  const auto before = c.snapshot();
  const auto ledger = c.ledger().collective;
  try {
    c.advance(VectorXd::Constant(2, 0.1));
    FAIL("expected a subsystem failure");
  } catch (const dmhe::SubsystemError& e) {
    CHECK(e.subsystem() == 1);
  }
  CHECK(c.instant() == 4);
  CHECK(c.ledger().collective == ledger);
  const auto after = c.snapshot();
  REQUIRE(after.states.size() == before.states.size());
  for (size_t j = 0; j < after.states.size(); ++j) {
    CHECK((after.states[j].array() == before.states[j].array()).all());
  }
  CHECK_THROWS_AS(c.advance(VectorXd::Constant(3, 0.1)), std::invalid_argument);
}

TEST_CASE("the shipped coupled model contracts from a wrong prior") {
  const auto m = dmhe::load_linear_model(std::string(DMHE_DATA_DIR) + "/linear_model.yaml");
  VectorXd x0(4);
  x0 << 1.0, -0.5, 0.8, 0.3;
  const auto trace = dmhe::simulate_linear(m, x0, 200, dmhe::NoiseSpec{});
  const auto est =
      run(m, VectorXd::Zero(4), trace.measurements, options(dmhe::Variant::kProposed, 4));
  const double e0 = (est[0] - trace.states[0]).norm();
  double worst_tail = 0.0;
  for (int k = 150; k < 200; ++k) {
    worst_tail = std::max(worst_tail, (est[k] - trace.states[k]).norm());
  }
  CHECK(e0 > 0.1);
  CHECK(worst_tail < 1e-4 * e0);
}
