#include <algorithm>
#include <sstream>

#include "dmhe/errors.hpp"
#include "dmhe/estimator.hpp"
#include "dmhe/linalg.hpp"

namespace dmhe {

namespace {

// ‖Σ_b M_b z_b − target‖² weighted by weight⁻¹.
struct Term {
  std::vector<std::pair<int, Eigen::MatrixXd>> blocks;
  Eigen::VectorXd target;
  Eigen::MatrixXd weight;
};

std::vector<Eigen::VectorXd> solve_terms(const std::vector<Term>& terms, int blocks, int d,
                                         FieAssembly assembly) {
  const int n = blocks * d;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  if (assembly == FieAssembly::kStacked) {
    int rows = 0;
    for (const auto& t : terms) rows += static_cast<int>(t.target.size());
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(rows, n);
    Eigen::VectorXd e(rows);
    int r = 0;
    for (const auto& t : terms) {
      const int m = static_cast<int>(t.target.size());
      const auto llt = checked_llt(t.weight, "oracle weight");
      for (const auto& [b, M] : t.blocks) {
        J.block(r, b * d, m, d) += llt.matrixL().solve(M);
      }
      e.segment(r, m) = llt.matrixL().solve(t.target);
      r += m;
    }
    H = J.transpose() * J;
    g = J.transpose() * e;
  } else {
    for (const auto& t : terms) {
      const Eigen::MatrixXd Wi = spd_inverse(t.weight, "oracle weight");
      for (const auto& [b, M] : t.blocks) {
        g.segment(b * d, d) += M.transpose() * Wi * t.target;
        for (const auto& [c, N] : t.blocks) {
          H.block(b * d, c * d, d, d) += M.transpose() * Wi * N;
        }
      }
    }
  }
  const Eigen::VectorXd z = checked_llt(H, "full-information normal equations").solve(g);
  std::vector<Eigen::VectorXd> out(blocks);
  for (int b = 0; b < blocks; ++b) out[b] = z.segment(b * d, d);
  return out;
}

}  // namespace

std::vector<Eigen::VectorXd> solve_fie_oracle(const std::vector<Eigen::VectorXd>& ys,
                                              const PartitionedLinearModel& model,
                                              const FieOptions& opt) {
  const Partition& p = model.partition();
  if (ys.empty()) throw std::invalid_argument("oracle needs measurements");
  const int k = static_cast<int>(ys.size()) - 1;
  for (const auto& y : ys) require_size(y, p.ny(), "oracle measurement");
  require_size(opt.x_bar0, p.nx(), "oracle prior center");
  std::vector<Term> terms;

  if (opt.mode == FieMode::kCentralized) {
    const int nx = p.nx();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(nx, nx);
    const Eigen::MatrixXd Q = model.Q();
    terms.push_back({{{0, I}}, opt.x_bar0, model.P0()});
    for (int j = 0; j <= k; ++j) {
      terms.push_back({{{j, model.C()}}, ys[j], model.R()});
    }
    for (int j = 0; j < k; ++j) {
      terms.push_back({{{j + 1, I}, {j, -model.A()}}, Eigen::VectorXd::Zero(nx), Q});
    }
    return solve_terms(terms, k + 1, nx, opt.assembly);
  }

  const int i = opt.subsystem;
  if (i < 0 || i >= p.n()) throw std::invalid_argument("oracle subsystem");
  const int d = p.state_dim(i);
  const auto sel = DerivedSelectors::compute(model);
  const auto rows = measurement_rows(p, i, opt.use_neighbor_measurements);
  auto direct = [&](int j) {
    return j == 0 || std::find(opt.direct_output_instants.begin(), opt.direct_output_instants.end(),
                               j) != opt.direct_output_instants.end();
  };
  auto tilde = [&](int j) -> const Eigen::VectorXd& {
    if (j < 0 || j >= static_cast<int>(opt.x_tilde.size())) {
      std::ostringstream os;
      os << "oracle has no neighbor estimate for instant " << j;
      throw std::invalid_argument(os.str());
    }
    require_size(opt.x_tilde[j], p.nx(), "oracle neighbor estimate");
    return opt.x_tilde[j];
  };
  const Eigen::MatrixXd Rs = select_block(model.R(), rows);
  const Eigen::MatrixXd Cc = select_rows(sel.C_col[i], rows);
  const Eigen::MatrixXd CA = select_rows(Eigen::MatrixXd(model.C() * sel.A_col[i]), rows);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);

  terms.push_back({{{0, I}}, p.local_state(opt.x_bar0, i), model.P0_block(i)});
  for (int j = 0; j <= k; ++j) {
    if (direct(j)) {
      terms.push_back(
          {{{j, Cc}}, select_rows(Eigen::VectorXd(ys[j] - sel.C_tilde[i] * tilde(j)), rows), Rs});
    } else {
      terms.push_back(
          {{{j - 1, CA}},
           select_rows(Eigen::VectorXd(ys[j] - model.C() * (sel.A_tilde[i] * tilde(j - 1))), rows),
           Rs});
    }
  }
  for (int j = 0; j < k; ++j) {
    Eigen::VectorXd drive = Eigen::VectorXd::Zero(d);
    for (int l = 0; l < p.n(); ++l) {
      if (l != i) drive += model.A_block(i, l) * p.local_state(tilde(j), l);
    }
    terms.push_back({{{j + 1, I}, {j, -model.A_block(i, i)}}, drive, model.Q_block(i)});
  }
  return solve_terms(terms, k + 1, d, opt.assembly);
}

}  // namespace dmhe
