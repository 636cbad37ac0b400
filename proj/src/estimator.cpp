#include "dmhe/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"

namespace dmhe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd lower_or_inf(const Eigen::VectorXd& v, int dim) {
  return v.size() ? v : Eigen::VectorXd::Constant(dim, -kInf);
}

Eigen::VectorXd upper_or_inf(const Eigen::VectorXd& v, int dim) {
  return v.size() ? v : Eigen::VectorXd::Constant(dim, kInf);
}

}  // namespace

bool ConstraintSet::has_state_bounds() const { return x_lower.size() > 0 || x_upper.size() > 0; }

bool ConstraintSet::has_disturbance_bounds() const {
  return w_lower.size() > 0 || w_upper.size() > 0;
}

void ConstraintSet::validate(int dim) const {
  auto check = [dim](const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, const char* what) {
    if (lo.size() != 0 && lo.size() != dim) {
      throw std::invalid_argument(std::string(what) + " lower bound length");
    }
    if (hi.size() != 0 && hi.size() != dim) {
      throw std::invalid_argument(std::string(what) + " upper bound length");
    }
    const Eigen::VectorXd l = lower_or_inf(lo, dim), u = upper_or_inf(hi, dim);
    for (int j = 0; j < dim; ++j) {
      if (std::isnan(l(j)) || std::isnan(u(j)) || l(j) > u(j)) {
        std::ostringstream os;
        os << what << " bounds are inconsistent at component " << j;
        throw InfeasibleError(os.str());
      }
    }
  };
  check(x_lower, x_upper, "state");
  check(w_lower, w_upper, "disturbance");
}

const Eigen::VectorXd& EstimationWindow::x_tilde_at(int j) const {
  const int idx = j - start();
  if (idx < 0 || idx >= static_cast<int>(x_tilde.size())) {
    std::ostringstream os;
    os << "no neighbor estimate for instant " << j << " in window ending at " << k;
    throw std::out_of_range(os.str());
  }
  return x_tilde[idx];
}

void EstimationWindow::validate(const Partition& p) const {
  if (N < 1) throw std::invalid_argument("window length N must be >= 1");
  if (k < 0) throw std::invalid_argument("instant k must be >= 0");
  if (i < 0 || i >= p.n()) throw std::invalid_argument("subsystem out of range");
  if (static_cast<int>(ys.size()) != length()) {
    throw std::invalid_argument("window measurement count differs from length");
  }
  for (const auto& y : ys) require_size(y, p.ny(), "window measurement");
  const int need = std::max(1, length() - 1);
  if (static_cast<int>(x_tilde.size()) != need) {
    throw std::invalid_argument("window neighbor history has the wrong length");
  }
  for (const auto& x : x_tilde) require_size(x, p.nx(), "neighbor estimate");
  if (rows.empty()) throw std::invalid_argument("window uses no measurements");
  for (int r : rows) {
    if (r < 0 || r >= p.ny()) throw std::invalid_argument("measurement row");
  }
  if (arrival) {
    require_shape(arrival->P, p.state_dim(i), p.state_dim(i), "arrival weight");
    require_size(arrival->x_bar, p.state_dim(i), "arrival center");
  }
}

LinearLocalDynamics::LinearLocalDynamics(const PartitionedLinearModel& model,
                                         const DerivedSelectors& sel, int i)
    : model_(model), sel_(sel), i_(i), CA_i_(model.C() * sel.A_col.at(i)) {}

int LinearLocalDynamics::state_dim() const { return model_.partition().state_dim(i_); }

Eigen::VectorXd LinearLocalDynamics::own_state(const Eigen::VectorXd& x) const {
  return model_.partition().local_state(x, i_);
}

Eigen::VectorXd LinearLocalDynamics::next(int, const Eigen::VectorXd& xi,
                                          const Eigen::VectorXd& x_tilde,
                                          Eigen::MatrixXd* jac) const {
  const Partition& p = model_.partition();
  if (jac) *jac = model_.A_block(i_, i_);
  Eigen::VectorXd out = model_.A_block(i_, i_) * xi;
  for (int l = 0; l < p.n(); ++l) {
    if (l != i_) out += model_.A_block(i_, l) * p.local_state(x_tilde, l);
  }
  return out;
}

Eigen::VectorXd LinearLocalDynamics::output_direct(int, const Eigen::VectorXd& xi,
                                                   const Eigen::VectorXd& x_tilde,
                                                   const std::vector<int>& rows,
                                                   Eigen::MatrixXd* jac) const {
  if (jac) *jac = select_rows(sel_.C_col[i_], rows);
  return select_rows(Eigen::VectorXd(sel_.C_col[i_] * xi + sel_.C_tilde[i_] * x_tilde), rows);
}

Eigen::VectorXd LinearLocalDynamics::output_predicted(int, const Eigen::VectorXd& xi,
                                                      const Eigen::VectorXd& x_tilde,
                                                      const std::vector<int>& rows,
                                                      Eigen::MatrixXd* jac) const {
  if (jac) *jac = select_rows(CA_i_, rows);
  return select_rows(Eigen::VectorXd(CA_i_ * xi + model_.C() * (sel_.A_tilde[i_] * x_tilde)), rows);
}

NonlinearLocalDynamics::NonlinearLocalDynamics(const NonlinearSystem& sys, int i)
    : sys_(sys), i_(i) {}

int NonlinearLocalDynamics::state_dim() const { return sys_.partition().state_dim(i_); }

Eigen::VectorXd NonlinearLocalDynamics::own_state(const Eigen::VectorXd& x) const {
  return sys_.partition().local_state(x, i_);
}

Eigen::VectorXd NonlinearLocalDynamics::composite(const Eigen::VectorXd& xi,
                                                  const Eigen::VectorXd& x_tilde) const {
  Eigen::VectorXd z = x_tilde;
  sys_.partition().set_local_state(z, i_, xi);
  return z;
}

Eigen::VectorXd NonlinearLocalDynamics::next(int j, const Eigen::VectorXd& xi,
                                             const Eigen::VectorXd& x_tilde,
                                             Eigen::MatrixXd* jac) const {
  const Eigen::VectorXd z = composite(xi, x_tilde);
  if (jac) {
    Eigen::MatrixXd d_Xi;
    sys_.jacobian_f(j, i_, z, *jac, d_Xi);
  }
  return sys_.f_local(j, i_, z);
}

Eigen::VectorXd NonlinearLocalDynamics::output_direct(int, const Eigen::VectorXd& xi,
                                                      const Eigen::VectorXd& x_tilde,
                                                      const std::vector<int>& rows,
                                                      Eigen::MatrixXd* jac) const {
  const Partition& p = sys_.partition();
  const Eigen::VectorXd z = composite(xi, x_tilde);
  if (jac) {
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(p.ny(), p.state_dim(i_));
    full.middleRows(p.output_offset(i_), p.output_dim(i_)) = sys_.jacobian_h(i_, xi);
    *jac = select_rows(full, rows);
  }
  return select_rows(sys_.h(z), rows);
}

Eigen::VectorXd NonlinearLocalDynamics::output_predicted(int j, const Eigen::VectorXd& xi,
                                                         const Eigen::VectorXd& x_tilde,
                                                         const std::vector<int>& rows,
                                                         Eigen::MatrixXd* jac) const {
  const Partition& p = sys_.partition();
  const Eigen::VectorXd z = composite(xi, x_tilde);
  const Eigen::VectorXd fz = sys_.f(j, z);
  if (jac) {
    // ∂h(f(z))/∂x^i = blockdiag(∂h_l) · ∂f/∂x^i, where only f_i and the
    // subsystems listing i as a neighbor depend on x^i.
    const int di = p.state_dim(i_);
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(p.ny(), di);
    for (int l = 0; l < p.n(); ++l) {
      Eigen::MatrixXd dfl;
      if (l == i_) {
        Eigen::MatrixXd d_Xl;
        sys_.jacobian_f(j, l, z, dfl, d_Xl);
      } else {
        const auto& nb = p.neighbors(l);
        auto it = std::find(nb.begin(), nb.end(), i_);
        if (it == nb.end()) continue;
        int col = 0;
        for (auto q = nb.begin(); q != it; ++q) col += p.state_dim(*q);
        Eigen::MatrixXd d_xl, d_Xl;
        sys_.jacobian_f(j, l, z, d_xl, d_Xl);
        dfl = d_Xl.middleCols(col, di);
      }
      full.middleRows(p.output_offset(l), p.output_dim(l)) =
          sys_.jacobian_h(l, p.local_state(fz, l)) * dfl;
    }
    *jac = select_rows(full, rows);
  }
  return select_rows(sys_.h(fz), rows);
}

namespace {

struct Whiteners {
  std::optional<Eigen::LLT<Eigen::MatrixXd>> P;
  Eigen::LLT<Eigen::MatrixXd> Q;
  Eigen::LLT<Eigen::MatrixXd> R;
};

struct Residuals {
  Eigen::VectorXd r;
  Eigen::MatrixXd J;  // empty unless requested
  std::vector<Eigen::VectorXd> w, v;
};

// Stacked whitened residual of the window objective at the state sequence z.
Residuals evaluate(const LocalDynamics& dyn, const EstimationWindow& win, const Whiteners& wh,
                   const Eigen::VectorXd& z, bool need_jac) {
  const int d = dyn.state_dim();
  const int L = win.length();
  const int s = win.start();
  const int m = static_cast<int>(win.rows.size());
  const int arr = win.arrival ? d : 0;
  const int rows_total = arr + m + (L - 1) * (d + m);
  Residuals out;
  out.r.resize(rows_total);
  if (need_jac) out.J = Eigen::MatrixXd::Zero(rows_total, L * d);
  int r = 0;
  if (win.arrival) {
    out.r.segment(r, d) = wh.P->matrixL().solve(Eigen::VectorXd(z.head(d) - win.arrival->x_bar));
    if (need_jac) {
      out.J.block(r, 0, d, d) = wh.P->matrixL().solve(Eigen::MatrixXd::Identity(d, d));
    }
    r += d;
  }
  {
    Eigen::MatrixXd Jh;
    const Eigen::VectorXd v =
        select_rows(win.ys[0], win.rows) -
        dyn.output_direct(s, z.head(d), win.x_tilde_at(s), win.rows, need_jac ? &Jh : nullptr);
    out.v.push_back(v);
    out.r.segment(r, m) = wh.R.matrixL().solve(v);
    if (need_jac) out.J.block(r, 0, m, d) = -wh.R.matrixL().solve(Jh);
    r += m;
  }
  for (int t = 0; t + 1 < L; ++t) {
    const int j = s + t;
    const Eigen::VectorXd xj = z.segment(t * d, d);
    const Eigen::VectorXd& xt = win.x_tilde_at(j);
    Eigen::MatrixXd Jf, Jhf;
    const Eigen::VectorXd w =
        z.segment((t + 1) * d, d) - dyn.next(j, xj, xt, need_jac ? &Jf : nullptr);
    out.w.push_back(w);
    out.r.segment(r, d) = wh.Q.matrixL().solve(w);
    if (need_jac) {
      out.J.block(r, (t + 1) * d, d, d) = wh.Q.matrixL().solve(Eigen::MatrixXd::Identity(d, d));
      out.J.block(r, t * d, d, d) = -wh.Q.matrixL().solve(Jf);
    }
    r += d;
    const Eigen::VectorXd v = select_rows(win.ys[t + 1], win.rows) -
                              dyn.output_predicted(j, xj, xt, win.rows, need_jac ? &Jhf : nullptr);
    out.v.push_back(v);
    out.r.segment(r, m) = wh.R.matrixL().solve(v);
    if (need_jac) out.J.block(r, t * d, m, d) = -wh.R.matrixL().solve(Jhf);
    r += m;
  }
  if (!out.r.allFinite()) {
    throw EvaluationError("non-finite residual in the estimation window", -1);
  }
  return out;
}

double clip(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

LocalSolution solve_local_window(const LocalDynamics& dyn, const EstimationWindow& win,
                                 const WindowWeights& weights, const ConstraintSet& cons,
                                 bool constrain_all_default, const SolveOptions& opt) {
  const int d = dyn.state_dim();
  const int L = win.length();
  const int s = win.start();
  const int n = L * d;
  cons.validate(d);

  Whiteners wh;
  if (win.arrival) wh.P = checked_llt(win.arrival->P, "arrival weight");
  wh.Q = checked_llt(weights.Q, "disturbance weight");
  wh.R = checked_llt(select_block(weights.R, win.rows), "measurement weight");

  const bool all = cons.constrain_all_window.value_or(constrain_all_default);
  const Eigen::VectorXd xl = lower_or_inf(cons.x_lower, d);
  const Eigen::VectorXd xu = upper_or_inf(cons.x_upper, d);
  const Eigen::VectorXd wl = lower_or_inf(cons.w_lower, d);
  const Eigen::VectorXd wu = upper_or_inf(cons.w_upper, d);
  const bool w_bounded = all && cons.has_disturbance_bounds();
  auto state_bounded = [&](int t) { return cons.has_state_bounds() && (all || t == L - 1); };
  auto pin = [&](int t) -> const std::optional<Eigen::VectorXd>* {
    if (t < static_cast<int>(opt.pins.size()) && opt.pins[t]) return &opt.pins[t];
    return nullptr;
  };

  // Initial guess and feasible starting sequence.
  std::vector<Eigen::VectorXd> guess = opt.warm_start;
  if (static_cast<int>(guess.size()) != L) {
    guess.assign(L, Eigen::VectorXd());
    guess[0] = win.arrival ? win.arrival->x_bar : dyn.own_state(win.x_tilde_at(s));
  }
  if (guess[0].size() != d) {
    throw std::invalid_argument("warm start has the wrong state dimension");
  }
  Eigen::VectorXd z(n);
  for (int t = 0; t < L; ++t) {
    const int j = s + t;
    Eigen::VectorXd target;
    Eigen::VectorXd pred;
    if (t > 0) pred = dyn.next(j - 1, z.segment((t - 1) * d, d), win.x_tilde_at(j - 1), nullptr);
    if (const auto* p = pin(t)) {
      target = **p;
      require_size(target, d, "pinned state");
    } else if (t < static_cast<int>(guess.size()) && guess[t].size() == d) {
      target = guess[t];
    } else {
      target = pred;
    }
    Eigen::VectorXd x(d);
    for (int c = 0; c < d; ++c) {
      double lo = state_bounded(t) ? xl(c) : -kInf;
      double hi = state_bounded(t) ? xu(c) : kInf;
      if (w_bounded && t > 0) {
        lo = std::max(lo, pred(c) + wl(c));
        hi = std::min(hi, pred(c) + wu(c));
      }
      if (lo > hi) {
        std::ostringstream os;
        os << "window of subsystem " << win.i + 1 << " is infeasible at instant " << j
           << ", component " << c;
        throw InfeasibleError(os.str());
      }
      if (pin(t)) {
        if (target(c) < lo || target(c) > hi) {
          std::ostringstream os;
          os << "pinned state at instant " << j << " violates the bounds";
          throw InfeasibleError(os.str());
        }
        x(c) = target(c);
      } else if (w_bounded && t > 0) {
        x(c) = pred(c) + clip(target(c) - pred(c), lo - pred(c), hi - pred(c));
        x(c) = clip(x(c), lo, hi);
      } else {
        x(c) = clip(target(c), lo, hi);
      }
    }
    z.segment(t * d, d) = x;
  }

  LocalSolution sol;
  sol.i = win.i;
  sol.k = win.k;
  sol.start = s;
  Residuals res = evaluate(dyn, win, wh, z, true);
  double phi = res.r.squaredNorm();
  sol.objective_history.push_back(phi);
  const int max_iter = dyn.is_affine() ? 1 : opt.max_iterations;
  bool converged = dyn.is_affine();
  QpResult last;
  for (int it = 1; it <= max_iter; ++it) {
    QpProblem qp;
    qp.H = symmetrize(res.J.transpose() * res.J);
    qp.g = res.J.transpose() * res.r;
    if (!dyn.is_affine() && spd_condition(qp.H) > 1e12) {
      qp.H.diagonal().array() += 1e-10 * std::max(1.0, qp.H.diagonal().maxCoeff());
    }
    // Constraint rows on the step δ.
    std::vector<Eigen::RowVectorXd> rows;
    std::vector<double> lo, hi;
    for (int t = 0; t < L; ++t) {
      const auto* p = pin(t);
      for (int c = 0; c < d; ++c) {
        const int col = t * d + c;
        Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(n);
        e(col) = 1.0;
        if (p) {
          rows.push_back(e);
          lo.push_back((**p)(c)-z(col));
          hi.push_back((**p)(c)-z(col));
        } else if (state_bounded(t) && (std::isfinite(xl(c)) || std::isfinite(xu(c)))) {
          rows.push_back(e);
          lo.push_back(std::min(0.0, xl(c) - z(col)));
          hi.push_back(std::max(0.0, xu(c) - z(col)));
        }
      }
    }
    if (w_bounded) {
      for (int t = 0; t + 1 < L; ++t) {
        Eigen::MatrixXd Jf;
        dyn.next(s + t, z.segment(t * d, d), win.x_tilde_at(s + t), &Jf);
        for (int c = 0; c < d; ++c) {
          if (!std::isfinite(wl(c)) && !std::isfinite(wu(c))) continue;
          Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(n);
          e.segment(t * d, d) = -Jf.row(c);
          e((t + 1) * d + c) += 1.0;
          const double wc = res.w[t](c);
          rows.push_back(e);
          // Linearization drift may leave wc marginally outside; keep δ=0
          // feasible.
          lo.push_back(std::min(0.0, wl(c) - wc));
          hi.push_back(std::max(0.0, wu(c) - wc));
        }
      }
    }
    qp.G.resize(rows.size(), n);
    qp.lower.resize(rows.size());
    qp.upper.resize(rows.size());
    for (size_t r = 0; r < rows.size(); ++r) {
      qp.G.row(r) = rows[r];
      qp.lower(r) = lo[r];
      qp.upper(r) = hi[r];
    }
    last = solve_qp(qp, Eigen::VectorXd::Zero(n), opt.qp);
    sol.active_set_changes += last.active_set_changes;
    sol.constraints_touched = sol.constraints_touched || last.constraints_touched;
    sol.iterations = it;
    const Eigen::VectorXd delta = last.x;

    if (dyn.is_affine()) {
      z += delta;
      break;
    }

    const double slope = 2.0 * qp.g.dot(delta);
    if (!(slope < 0.0)) {
      converged = true;
      break;
    }
    auto trial_point = [&](double a) {
      Eigen::VectorXd zt = z + a * delta;
      for (int t = 0; t < L; ++t) {
        if (const auto* p = pin(t)) zt.segment(t * d, d) = **p;
        if (state_bounded(t)) {
          for (int c = 0; c < d; ++c) {
            zt(t * d + c) = clip(zt(t * d + c), xl(c), xu(c));
          }
        }
      }
      return zt;
    };
    auto trial_objective = [&](const Eigen::VectorXd& zt) {
      try {
        return evaluate(dyn, win, wh, zt, false).r.squaredNorm();
      } catch (const EvaluationError&) {
        return kInf;
      }
    };
    double alpha = 1.0;
    bool accepted = false;
    double phi_trial = phi;
    Eigen::VectorXd z_next;
    for (int b = 0; b < 40; ++b) {
      Eigen::VectorXd zt = trial_point(alpha);
      phi_trial = trial_objective(zt);
      if (phi_trial <= phi + opt.armijo * alpha * slope) {
        z_next = std::move(zt);
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      converged = true;
      break;
    }
    // Full steps along a curved valley may undershoot; extrapolate while the
    // objective keeps falling.
    const int doublings = alpha == 1.0 ? opt.max_step_doublings : 0;
    for (int e = 0; e < doublings; ++e) {
      Eigen::VectorXd zt = trial_point(2.0 * alpha);
      const double p = trial_objective(zt);
      if (!(p < phi_trial)) break;
      alpha *= 2.0;
      phi_trial = p;
      z_next = std::move(zt);
    }
    z = std::move(z_next);
    const double decrease = phi - phi_trial;
    phi = phi_trial;
    sol.objective_history.push_back(phi);
    const double step = alpha * delta.lpNorm<Eigen::Infinity>();
    res = evaluate(dyn, win, wh, z, true);
    if (decrease <= opt.relative_tolerance * std::max(phi + decrease, 1e-300) ||
        step <= 1e-12 * (1.0 + z.lpNorm<Eigen::Infinity>()) || phi < 1e-28) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream os;
    os << "Gauss-Newton iteration cap reached for subsystem " << win.i + 1 << " at instant "
       << win.k;
    throw NonConvergenceError(os.str(), z);
  }

  // Remove rounding drift from the bounded coordinates.
  for (int t = 0; t < L; ++t) {
    if (const auto* p = pin(t)) z.segment(t * d, d) = **p;
    if (!state_bounded(t)) continue;
    for (int c = 0; c < d; ++c) z(t * d + c) = clip(z(t * d + c), xl(c), xu(c));
  }
  res = evaluate(dyn, win, wh, z, false);
  sol.x.resize(L);
  for (int t = 0; t < L; ++t) sol.x[t] = z.segment(t * d, d);
  sol.w = res.w;
  sol.v = res.v;
  sol.objective = res.r.squaredNorm();
  sol.kkt_residual = last.kkt_residual;
  return sol;
}

LocalSolution solve_local_mhe_linear(const EstimationWindow& window,
                                     const PartitionedLinearModel& model,
                                     const DerivedSelectors& sel, const ConstraintSet& constraints,
                                     const SolveOptions& options) {
  window.validate(model.partition());
  LinearLocalDynamics dyn(model, sel, window.i);
  return solve_local_window(dyn, window, {model.Q_block(window.i), model.R()}, constraints, false,
                            options);
}

LocalSolution solve_local_mhe_nonlinear(const EstimationWindow& window, const NonlinearSystem& sys,
                                        const NonlinearWeights& weights,
                                        const ConstraintSet& constraints,
                                        const SolveOptions& options) {
  window.validate(sys.partition());
  NonlinearLocalDynamics dyn(sys, window.i);
  return solve_local_window(dyn, window, {weights.Q.at(window.i), weights.R}, constraints, true,
                            options);
}

LocalSolution evaluate_window(const LocalDynamics& dyn, const EstimationWindow& win,
                              const WindowWeights& weights,
                              const std::vector<Eigen::VectorXd>& states) {
  const int d = dyn.state_dim();
  const int L = win.length();
  if (static_cast<int>(states.size()) != L) {
    throw std::invalid_argument("state sequence length differs from window");
  }
  Whiteners wh;
  if (win.arrival) wh.P = checked_llt(win.arrival->P, "arrival weight");
  wh.Q = checked_llt(weights.Q, "disturbance weight");
  wh.R = checked_llt(select_block(weights.R, win.rows), "measurement weight");
  Eigen::VectorXd z(L * d);
  for (int t = 0; t < L; ++t) {
    require_size(states[t], d, "window state");
    z.segment(t * d, d) = states[t];
  }
  const Residuals res = evaluate(dyn, win, wh, z, false);
  LocalSolution sol;
  sol.i = win.i;
  sol.k = win.k;
  sol.start = win.start();
  sol.x = states;
  sol.w = res.w;
  sol.v = res.v;
  sol.objective = res.r.squaredNorm();
  return sol;
}

double recompute_objective(const LocalSolution& sol, const EstimationWindow& window,
                           const WindowWeights& weights) {
  double total = 0.0;
  if (window.arrival) {
    total += inverse_weighted_norm(sol.x.front() - window.arrival->x_bar, window.arrival->P);
  }
  for (const auto& w : sol.w) total += inverse_weighted_norm(w, weights.Q);
  const Eigen::MatrixXd R = select_block(weights.R, window.rows);
  for (const auto& v : sol.v) total += inverse_weighted_norm(v, R);
  return total;
}

}  // namespace dmhe
