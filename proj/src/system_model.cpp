#include "dmhe/system_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"

namespace dmhe {

namespace {

std::string idx(const char* what, int i) {
  std::ostringstream os;
  os << what << "[" << i << "]";
  return os.str();
}

bool same_bits(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    if (!(a(j) == b(j)) && !(std::isnan(a(j)) && std::isnan(b(j)))) {
      return false;
    }
  }
  return true;
}

}  // namespace

Partition::Partition(std::vector<int> state_dims, std::vector<int> output_dims,
                     std::vector<std::vector<int>> interaction_graph)
    : state_dims_(std::move(state_dims)),
      output_dims_(std::move(output_dims)),
      graph_(std::move(interaction_graph)) {
  const int n = static_cast<int>(state_dims_.size());
  if (n == 0) throw std::invalid_argument("Partition: no subsystems");
  if (static_cast<int>(output_dims_.size()) != n) {
    throw std::invalid_argument("Partition: output_dims length differs from n");
  }
  if (graph_.empty()) graph_.assign(n, {});
  if (static_cast<int>(graph_.size()) != n) {
    throw std::invalid_argument("Partition: interaction graph needs n entries");
  }
  for (int i = 0; i < n; ++i) {
    if (state_dims_[i] < 1 || output_dims_[i] < 1) {
      throw std::invalid_argument("Partition: dimensions must be positive");
    }
    state_offsets_.push_back(nx_);
    output_offsets_.push_back(ny_);
    nx_ += state_dims_[i];
    ny_ += output_dims_[i];
    auto& g = graph_[i];
    std::sort(g.begin(), g.end());
    if (std::adjacent_find(g.begin(), g.end()) != g.end()) {
      throw std::invalid_argument("Partition: duplicate neighbor");
    }
    for (int l : g) {
      if (l == i) throw std::invalid_argument("Partition: self-edge");
      if (l < 0 || l >= n) {
        throw std::invalid_argument("Partition: neighbor index out of range");
      }
    }
  }
}

int Partition::neighbor_dim(int i) const {
  int d = 0;
  for (int l : graph_.at(i)) d += state_dims_[l];
  return d;
}

Eigen::VectorXd Partition::local_state(const Eigen::VectorXd& x, int i) const {
  require_size(x, nx_, "global state");
  return x.segment(state_offset(i), state_dim(i));
}

Eigen::VectorXd Partition::local_output(const Eigen::VectorXd& y, int i) const {
  require_size(y, ny_, "global output");
  return y.segment(output_offset(i), output_dim(i));
}

Eigen::VectorXd Partition::pack_neighbors(const Eigen::VectorXd& x, int i) const {
  require_size(x, nx_, "global state");
  Eigen::VectorXd X(neighbor_dim(i));
  int r = 0;
  for (int l : graph_.at(i)) {
    X.segment(r, state_dims_[l]) = x.segment(state_offsets_[l], state_dims_[l]);
    r += state_dims_[l];
  }
  return X;
}

void Partition::set_local_state(Eigen::VectorXd& x, int i, const Eigen::VectorXd& xi) const {
  require_size(x, nx_, "global state");
  require_size(xi, state_dim(i), "local state");
  x.segment(state_offset(i), state_dim(i)) = xi;
}

std::vector<int> Partition::output_rows(int i) const {
  std::vector<int> rows(output_dim(i));
  for (int r = 0; r < output_dim(i); ++r) rows[r] = output_offset(i) + r;
  return rows;
}

PartitionedLinearModel::PartitionedLinearModel(BlockGrid A_blocks,
                                               std::vector<Eigen::MatrixXd> C_blocks,
                                               std::vector<Eigen::MatrixXd> Q_blocks,
                                               std::vector<Eigen::MatrixXd> R_blocks,
                                               std::vector<Eigen::MatrixXd> P0_blocks)
    : A_blocks_(std::move(A_blocks)),
      C_blocks_(std::move(C_blocks)),
      Q_blocks_(std::move(Q_blocks)),
      R_blocks_(std::move(R_blocks)),
      P0_blocks_(std::move(P0_blocks)) {
  const int n = static_cast<int>(A_blocks_.size());
  if (n == 0) throw std::invalid_argument("PartitionedLinearModel: no blocks");
  for (const auto* v : {&C_blocks_, &Q_blocks_, &R_blocks_, &P0_blocks_}) {
    if (static_cast<int>(v->size()) != n) {
      throw std::invalid_argument("PartitionedLinearModel: block lists must have n entries");
    }
  }
  std::vector<int> sd(n), od(n);
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(A_blocks_[i].size()) != n) {
      throw std::invalid_argument(idx("A block row", i) + " must have n blocks");
    }
    sd[i] = static_cast<int>(A_blocks_[i][i].rows());
    od[i] = static_cast<int>(C_blocks_[i].rows());
  }
  std::vector<std::vector<int>> graph(n);
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < n; ++l) {
      auto& b = A_blocks_[i][l];
      if (b.size() == 0 && l != i) b = Eigen::MatrixXd::Zero(sd[i], sd[l]);
      require_shape(b, sd[i], sd[l], idx("A block row", i) + idx(" col", l));
      if (l != i && b.cwiseAbs().maxCoeff() > 0.0) graph[i].push_back(l);
    }
    require_shape(C_blocks_[i], od[i], sd[i], idx("C block", i));
    require_shape(Q_blocks_[i], sd[i], sd[i], idx("Q block", i));
    require_shape(R_blocks_[i], od[i], od[i], idx("R block", i));
    require_shape(P0_blocks_[i], sd[i], sd[i], idx("P0 block", i));
    require_spd(Q_blocks_[i], idx("Q block", i));
    require_spd(R_blocks_[i], idx("R block", i));
    require_spd(P0_blocks_[i], idx("P0 block", i));
  }
  partition_ = Partition(sd, od, graph);
  A_.resize(partition_.nx(), partition_.nx());
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < n; ++l) {
      A_.block(partition_.state_offset(i), partition_.state_offset(l), sd[i], sd[l]) =
          A_blocks_[i][l];
    }
  }
  C_ = block_diagonal(C_blocks_);
  R_ = block_diagonal(R_blocks_);
}

Eigen::MatrixXd PartitionedLinearModel::Q() const { return block_diagonal(Q_blocks_); }

Eigen::MatrixXd PartitionedLinearModel::P0() const { return block_diagonal(P0_blocks_); }

PartitionedLinearModel PartitionedLinearModel::with_weights(
    std::vector<Eigen::MatrixXd> Q_blocks, std::vector<Eigen::MatrixXd> R_blocks,
    std::vector<Eigen::MatrixXd> P0_blocks) const {
  return PartitionedLinearModel(A_blocks_, C_blocks_, std::move(Q_blocks), std::move(R_blocks),
                                std::move(P0_blocks));
}

GlobalMatrices assemble_global(const PartitionedLinearModel& model) {
  return {model.A(), model.C()};
}

DerivedSelectors DerivedSelectors::compute(const PartitionedLinearModel& model) {
  const Partition& p = model.partition();
  const Eigen::MatrixXd& A = model.A();
  const Eigen::MatrixXd& C = model.C();
  DerivedSelectors s;
  s.A_d = Eigen::MatrixXd::Zero(p.nx(), p.nx());
  for (int i = 0; i < p.n(); ++i) {
    const int o = p.state_offset(i), d = p.state_dim(i);
    s.A_col.push_back(A.middleCols(o, d));
    s.C_col.push_back(C.middleCols(o, d));
    Eigen::MatrixXd At = A;
    At.middleCols(o, d).setZero();
    s.A_tilde.push_back(At);
    Eigen::MatrixXd Ct = C;
    Ct.middleCols(o, d).setZero();
    s.C_tilde.push_back(Ct);
    s.A_d.block(o, o, d, d) = A.block(o, o, d, d);
  }
  s.A_r = A - s.A_d;
  return s;
}

NonlinearSystem::NonlinearSystem(Partition partition,
                                 std::vector<NonlinearSubsystemModel> subsystems,
                                 const Eigen::VectorXd& nominal)
    : partition_(std::move(partition)), subsystems_(std::move(subsystems)) {
  const Partition& p = partition_;
  if (static_cast<int>(subsystems_.size()) != p.n()) {
    throw std::invalid_argument("NonlinearSystem: need one model per subsystem");
  }
  for (int i = 0; i < p.n(); ++i) {
    if (!subsystems_[i].f || !subsystems_[i].h) {
      throw std::invalid_argument(idx("NonlinearSystem: subsystem", i) + " is missing f or h");
    }
  }
  Eigen::VectorXd center = nominal.size() == 0 ? Eigen::VectorXd::Zero(p.nx()) : nominal;
  require_size(center, p.nx(), "NonlinearSystem nominal state");
  std::mt19937_64 rng(20240917);
  std::uniform_real_distribution<double> unif(-0.1, 0.1);
  for (int probe = 0; probe < 10; ++probe) {
    Eigen::VectorXd x(p.nx());
    for (int j = 0; j < p.nx(); ++j) {
      x(j) = center(j) + unif(rng) * std::max(1.0, std::abs(center(j)));
    }
    for (int i = 0; i < p.n(); ++i) {
      const Eigen::VectorXd xi = p.local_state(x, i);
      const Eigen::VectorXd Xi = p.pack_neighbors(x, i);
      const Eigen::VectorXd f1 = subsystems_[i].f(0, xi, Xi);
      const Eigen::VectorXd h1 = subsystems_[i].h(xi);
      if (f1.size() != p.state_dim(i)) {
        throw std::invalid_argument(idx("NonlinearSystem: f", i) + " returns the wrong dimension");
      }
      if (h1.size() != p.output_dim(i)) {
        throw std::invalid_argument(idx("NonlinearSystem: h", i) + " returns the wrong dimension");
      }
      if (!same_bits(f1, subsystems_[i].f(0, xi, Xi)) || !same_bits(h1, subsystems_[i].h(xi))) {
        throw std::invalid_argument(idx("NonlinearSystem: subsystem", i) + " is not deterministic");
      }
    }
  }
}

Eigen::VectorXd NonlinearSystem::f_local(int k, int i, const Eigen::VectorXd& x) const {
  return subsystems_.at(i).f(k, partition_.local_state(x, i), partition_.pack_neighbors(x, i));
}

Eigen::VectorXd NonlinearSystem::f(int k, const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(partition_.nx());
  for (int i = 0; i < partition_.n(); ++i) {
    out.segment(partition_.state_offset(i), partition_.state_dim(i)) = f_local(k, i, x);
  }
  return out;
}

Eigen::VectorXd NonlinearSystem::h_local(int i, const Eigen::VectorXd& xi) const {
  return subsystems_.at(i).h(xi);
}

Eigen::VectorXd NonlinearSystem::h(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(partition_.ny());
  for (int i = 0; i < partition_.n(); ++i) {
    out.segment(partition_.output_offset(i), partition_.output_dim(i)) =
        h_local(i, partition_.local_state(x, i));
  }
  return out;
}

void NonlinearSystem::jacobian_f(int k, int i, const Eigen::VectorXd& x, Eigen::MatrixXd& d_xi,
                                 Eigen::MatrixXd& d_Xi) const {
  const Eigen::VectorXd xi = partition_.local_state(x, i);
  const Eigen::VectorXd Xi = partition_.pack_neighbors(x, i);
  const auto& sub = subsystems_.at(i);
  if (sub.jac_f) {
    sub.jac_f(k, xi, Xi, d_xi, d_Xi);
    require_shape(d_xi, xi.size(), xi.size(), idx("analytic df/dx", i));
    require_shape(d_Xi, xi.size(), Xi.size(), idx("analytic df/dX", i));
    return;
  }
  const Eigen::Index ni = xi.size();
  Eigen::VectorXd z(ni + Xi.size());
  z << xi, Xi;
  const Eigen::MatrixXd J = central_difference_jacobian(
      [&](const Eigen::VectorXd& v) { return sub.f(k, v.head(ni), v.tail(v.size() - ni)); }, z);
  d_xi = J.leftCols(ni);
  d_Xi = J.rightCols(Xi.size());
}

Eigen::MatrixXd NonlinearSystem::jacobian_h(int i, const Eigen::VectorXd& xi) const {
  const auto& sub = subsystems_.at(i);
  if (sub.jac_h) {
    Eigen::MatrixXd J = sub.jac_h(xi);
    require_shape(J, partition_.output_dim(i), xi.size(), idx("analytic dh", i));
    return J;
  }
  return central_difference_jacobian(sub.h, xi);
}

NonlinearSystem NonlinearSystem::without_analytic_jacobians() const {
  NonlinearSystem out = *this;
  for (auto& s : out.subsystems_) {
    s.jac_f = nullptr;
    s.jac_h = nullptr;
  }
  return out;
}

Linearization linearize(const NonlinearSystem& system, int k, const Eigen::VectorXd& x) {
  const Partition& p = system.partition();
  require_size(x, p.nx(), "linearization point");
  Linearization lin;
  lin.A = Eigen::MatrixXd::Zero(p.nx(), p.nx());
  lin.C = Eigen::MatrixXd::Zero(p.ny(), p.nx());
  for (int i = 0; i < p.n(); ++i) {
    Eigen::MatrixXd d_xi, d_Xi;
    try {
      system.jacobian_f(k, i, x, d_xi, d_Xi);
    } catch (const EvaluationError& e) {
      // Map the local coordinate back to a global state index.
      int local = e.index(), global = -1;
      if (local >= 0 && local < p.state_dim(i)) {
        global = p.state_offset(i) + local;
      } else if (local >= 0) {
        int r = local - p.state_dim(i);
        for (int l : p.neighbors(i)) {
          if (r < p.state_dim(l)) {
            global = p.state_offset(l) + r;
            break;
          }
          r -= p.state_dim(l);
        }
      }
      throw EvaluationError(e.what(), global);
    }
    const int oi = p.state_offset(i), di = p.state_dim(i);
    lin.A.block(oi, oi, di, di) = d_xi;
    int c = 0;
    for (int l : p.neighbors(i)) {
      lin.A.block(oi, p.state_offset(l), di, p.state_dim(l)) = d_Xi.middleCols(c, p.state_dim(l));
      c += p.state_dim(l);
    }
    try {
      lin.C.block(p.output_offset(i), oi, p.output_dim(i), di) =
          system.jacobian_h(i, p.local_state(x, i));
    } catch (const EvaluationError& e) {
      throw EvaluationError(e.what(), e.index() >= 0 ? oi + e.index() : -1);
    }
  }
  return lin;
}

Eigen::MatrixXd central_difference_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& fn, const Eigen::VectorXd& x,
    double rel, double floor) {
  const Eigen::VectorXd f0 = fn(x);
  if (!f0.allFinite()) {
    throw EvaluationError("non-finite value at the linearization point", -1);
  }
  Eigen::MatrixXd J(f0.size(), x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double h = std::max(floor, rel * std::abs(x(j)));
    xp(j) = x(j) + h;
    const Eigen::VectorXd fp = fn(xp);
    xp(j) = x(j) - h;
    const Eigen::VectorXd fm = fn(xp);
    xp(j) = x(j);
    if (!fp.allFinite() || !fm.allFinite()) {
      std::ostringstream os;
      os << "non-finite value while differentiating coordinate " << j;
      throw EvaluationError(os.str(), static_cast<int>(j));
    }
    J.col(j) = (fp - fm) / (2.0 * h);
  }
  return J;
}

NonlinearSystem as_nonlinear(const PartitionedLinearModel& model) {
  const Partition& p = model.partition();
  std::vector<NonlinearSubsystemModel> subs(p.n());
  for (int i = 0; i < p.n(); ++i) {
    Eigen::MatrixXd Aii = model.A_block(i, i);
    Eigen::MatrixXd AiX(p.state_dim(i), p.neighbor_dim(i));
    int c = 0;
    for (int l : p.neighbors(i)) {
      AiX.middleCols(c, p.state_dim(l)) = model.A_block(i, l);
      c += p.state_dim(l);
    }
    Eigen::MatrixXd Cii = model.C_block(i);
    subs[i].f = [Aii, AiX](int, const Eigen::VectorXd& xi,
                           const Eigen::VectorXd& Xi) -> Eigen::VectorXd {
      return Aii * xi + AiX * Xi;
    };
    subs[i].jac_f = [Aii, AiX](int, const Eigen::VectorXd&, const Eigen::VectorXd&,
                               Eigen::MatrixXd& dx, Eigen::MatrixXd& dX) {
      dx = Aii;
      dX = AiX;
    };
    subs[i].h = [Cii](const Eigen::VectorXd& xi) -> Eigen::VectorXd { return Cii * xi; };
    subs[i].jac_h = [Cii](const Eigen::VectorXd&) -> Eigen::MatrixXd { return Cii; };
  }
  return NonlinearSystem(p, std::move(subs));
}

}  // namespace dmhe
