#include "dmhe/coordinator.hpp"

#include <exception>
#include <sstream>
#include <thread>

#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"

namespace dmhe {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kProposed:
      return "proposed";
    case Variant::kDmhe1:
      return "dmhe1";
    case Variant::kDmhe2:
      return "dmhe2";
    case Variant::kDmhe3:
      return "dmhe3";
    case Variant::kFieOracle:
      return "fie-oracle";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::kProposed, Variant::kDmhe1, Variant::kDmhe2, Variant::kDmhe3,
                    Variant::kFieOracle}) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown variant '" + name + "'");
}

VariantConfig VariantConfig::make(Variant v, int N) {
  VariantConfig c;
  c.variant = v;
  c.N = N;
  switch (v) {
    case Variant::kProposed:
    case Variant::kFieOracle:
      c.use_neighbor_measurements = true;
      c.arrival_mode = ArrivalMode::kRecursive;
      break;
    case Variant::kDmhe1:
      c.use_neighbor_measurements = false;
      c.arrival_mode = ArrivalMode::kConstant;
      break;
    case Variant::kDmhe2:
      c.use_neighbor_measurements = false;
      c.arrival_mode = ArrivalMode::kNone;
      break;
    case Variant::kDmhe3:
      c.use_neighbor_measurements = true;
      c.arrival_mode = ArrivalMode::kConstant;
      break;
  }
  return c;
}

void VariantConfig::validate() const {
  if (N < 1) throw std::invalid_argument("window length N must be >= 1");
  const VariantConfig ref = make(variant, N);
  if (ref.use_neighbor_measurements != use_neighbor_measurements ||
      ref.arrival_mode != arrival_mode) {
    throw std::invalid_argument("variant " + to_string(variant) +
                                " has inconsistent arrival/measurement flags");
  }
}

const Eigen::VectorXd& ExchangeSnapshot::at(int j) const {
  if (j < 0 || j >= static_cast<int>(states.size())) {
    std::ostringstream os;
    os << "snapshot stamped " << stamp << " holds no estimate for instant " << j;
    throw std::out_of_range(os.str());
  }
  return states[j];
}

void ExchangeSnapshot::assert_causal() const {
  for (size_t j = 0; j < produced_at.size(); ++j) {
    if (produced_at[j] > stamp) {
      std::ostringstream os;
      os << "snapshot stamped " << stamp << " contains an estimate of instant " << j
         << " produced at " << produced_at[j];
      throw std::logic_error(os.str());
    }
  }
}

class LocalEstimator {
 public:
  struct Context {
    const PartitionedLinearModel* linear = nullptr;
    const DerivedSelectors* sel = nullptr;
    const NonlinearSystem* nonlinear = nullptr;
    const NonlinearWeights* weights = nullptr;
    const CoordinatorOptions* options = nullptr;
    const Eigen::VectorXd* x_bar0 = nullptr;
  };

  struct Step {
    LocalSolution solution;
    std::optional<ArrivalPrior> arrival;
    std::optional<ArrivalCostState> chain;
  };

  LocalEstimator(int i, Context ctx) : i_(i), ctx_(ctx) {}

  Step compute(int k, const ExchangeSnapshot& snap, const std::vector<Eigen::VectorXd>& ys) const;
  void commit(Step&& step) {
    chain_ = std::move(step.chain);
    last_ = std::move(step.solution);
  }
  const std::optional<ArrivalCostState>& chain() const { return chain_; }

 private:
  const Partition& partition() const {
    return ctx_.linear ? ctx_.linear->partition() : ctx_.nonlinear->partition();
  }
  Eigen::MatrixXd P0() const {
    return ctx_.linear ? ctx_.linear->P0_block(i_) : ctx_.weights->P0.at(i_);
  }
  Eigen::VectorXd predict(int j, const Eigen::VectorXd& xi, const Eigen::VectorXd& x_tilde) const;

  int i_;
  Context ctx_;
  std::optional<ArrivalCostState> chain_;
  std::optional<LocalSolution> last_;
};

Eigen::VectorXd LocalEstimator::predict(int j, const Eigen::VectorXd& xi,
                                        const Eigen::VectorXd& x_tilde) const {
  if (ctx_.linear) {
    return LinearLocalDynamics(*ctx_.linear, *ctx_.sel, i_).next(j, xi, x_tilde, nullptr);
  }
  return NonlinearLocalDynamics(*ctx_.nonlinear, i_).next(j, xi, x_tilde, nullptr);
}

LocalEstimator::Step LocalEstimator::compute(int k, const ExchangeSnapshot& snap,
                                             const std::vector<Eigen::VectorXd>& ys) const {
  const Partition& p = partition();
  const VariantConfig& vc = ctx_.options->variant;
  const int s = k > vc.N ? k - vc.N : 0;
  const auto rows = measurement_rows(p, i_, vc.use_neighbor_measurements);
  const Eigen::VectorXd x_bar0_i = p.local_state(*ctx_.x_bar0, i_);
  Step step;
  step.chain = chain_;

  if (s == 0) {
    step.arrival = ArrivalPrior{P0(), x_bar0_i};
  } else if (vc.arrival_mode == ArrivalMode::kNone) {
    step.arrival.reset();
  } else if (vc.arrival_mode == ArrivalMode::kRecursive) {
    auto& chain = step.chain;
    if (!chain) {
      if (ctx_.linear) {
        chain = init_arrival(*ctx_.linear, *ctx_.sel, i_, ys[0], snap.at(0), x_bar0_i, rows);
      } else {
        chain = init_arrival_nonlinear(*ctx_.nonlinear, *ctx_.weights, i_, ys[0], snap.at(0),
                                       x_bar0_i, snap.at(0), rows);
      }
    }
    while (chain->k < s - 1) {
      const int j = chain->k;
      const Eigen::VectorXd& xt = snap.at(j);
      if (ctx_.linear) {
        chain = time_update(
            *ctx_.linear, output_update(*ctx_.linear, *ctx_.sel, *chain, ys[j + 1], xt, rows), xt);
      } else {
        chain =
            update_for_nonlinear(*ctx_.nonlinear, *ctx_.weights, *chain, ys[j + 1], xt, xt, rows);
      }
    }
    const Eigen::VectorXd& xt = snap.at(s - 1);
    step.arrival = ctx_.linear
                       ? arrival_readout(*ctx_.linear, *chain, xt)
                       : arrival_readout_nonlinear(*ctx_.nonlinear, *ctx_.weights, *chain, xt, xt);
  } else {
    // Constant weight centered on the a priori one-step prediction from the
    // previous instant's estimate of x_{s−1}.
    if (!last_ || last_->start > s - 1) {
      throw std::logic_error("constant arrival cost needs the previous window");
    }
    const Eigen::VectorXd& prev = last_->x[s - 1 - last_->start];
    step.arrival = ArrivalPrior{P0(), predict(s - 1, prev, snap.at(s - 1))};
  }

  EstimationWindow win;
  win.i = i_;
  win.k = k;
  win.N = vc.N;
  win.rows = rows;
  win.arrival = step.arrival;
  for (int j = s; j <= k; ++j) win.ys.push_back(ys[j]);
  for (int j = s; j <= std::max(s, k - 1); ++j) win.x_tilde.push_back(snap.at(j));

  SolveOptions opt = ctx_.options->solve;
  if (last_) {
    opt.warm_start.clear();
    for (int j = s; j <= k; ++j) {
      if (j >= last_->start && j <= last_->k) {
        opt.warm_start.push_back(last_->x[j - last_->start]);
      } else {
        opt.warm_start.push_back(predict(j - 1, opt.warm_start.back(), snap.at(j - 1)));
      }
    }
  }
  static const ConstraintSet kNoConstraints;
  const auto& cons = ctx_.options->constraints;
  const ConstraintSet& ci = cons.empty() ? kNoConstraints : cons.at(i_);

  if (vc.variant == Variant::kFieOracle) {
    if (!ctx_.linear) {
      throw std::invalid_argument("the fie-oracle variant needs a linear model");
    }
    FieOptions fo;
    fo.mode = FieMode::kDistributed;
    fo.subsystem = i_;
    fo.x_bar0 = *ctx_.x_bar0;
    fo.x_tilde = snap.states;
    fo.direct_output_instants = {s};
    fo.use_neighbor_measurements = vc.use_neighbor_measurements;
    const std::vector<Eigen::VectorXd> head(ys.begin(), ys.begin() + k + 1);
    const auto traj = solve_fie_oracle(head, *ctx_.linear, fo);
    std::vector<Eigen::VectorXd> xs(traj.begin() + s, traj.end());
    LinearLocalDynamics dyn(*ctx_.linear, *ctx_.sel, i_);
    step.solution = evaluate_window(dyn, win, {ctx_.linear->Q_block(i_), ctx_.linear->R()}, xs);
  } else if (ctx_.linear) {
    step.solution = solve_local_mhe_linear(win, *ctx_.linear, *ctx_.sel, ci, opt);
  } else {
    step.solution = solve_local_mhe_nonlinear(win, *ctx_.nonlinear, *ctx_.weights, ci, opt);
  }
  return step;
}

Coordinator::Coordinator(const PartitionedLinearModel& model, Eigen::VectorXd x_bar0,
                         CoordinatorOptions options)
    : linear_(std::make_unique<PartitionedLinearModel>(model)),
      selectors_(std::make_unique<DerivedSelectors>(DerivedSelectors::compute(model))),
      options_(std::move(options)) {
  init(std::move(x_bar0));
}

Coordinator::Coordinator(const NonlinearSystem& system, NonlinearWeights weights,
                         Eigen::VectorXd x_bar0, CoordinatorOptions options)
    : nonlinear_(std::make_unique<NonlinearSystem>(system)),
      weights_(std::move(weights)),
      options_(std::move(options)) {
  const Partition& p = nonlinear_->partition();
  if (static_cast<int>(weights_.Q.size()) != p.n() ||
      static_cast<int>(weights_.P0.size()) != p.n()) {
    throw std::invalid_argument("nonlinear weights need one block per subsystem");
  }
  require_shape(weights_.R, p.ny(), p.ny(), "measurement weight");
  require_spd(weights_.R, "measurement weight");
  for (int i = 0; i < p.n(); ++i) {
    require_shape(weights_.Q[i], p.state_dim(i), p.state_dim(i), "Q block");
    require_shape(weights_.P0[i], p.state_dim(i), p.state_dim(i), "P0 block");
    require_spd(weights_.Q[i], "Q block");
    require_spd(weights_.P0[i], "P0 block");
  }
  if (options_.variant.variant == Variant::kFieOracle) {
    throw std::invalid_argument("the fie-oracle variant needs a linear model");
  }
  init(std::move(x_bar0));
}

Coordinator::~Coordinator() = default;

const Partition& Coordinator::partition() const {
  return linear_ ? linear_->partition() : nonlinear_->partition();
}

void Coordinator::init(Eigen::VectorXd x_bar0) {
  options_.variant.validate();
  const Partition& p = partition();
  require_size(x_bar0, p.nx(), "initial guess");
  if (!options_.constraints.empty()) {
    if (static_cast<int>(options_.constraints.size()) != p.n()) {
      throw std::invalid_argument("constraints need one entry per subsystem");
    }
    for (int i = 0; i < p.n(); ++i) options_.constraints[i].validate(p.state_dim(i));
  }
  x_bar0_ = std::move(x_bar0);
  table_.stamp = -1;
  table_.states = {x_bar0_};
  table_.produced_at = {-1};
  LocalEstimator::Context ctx;
  ctx.linear = linear_.get();
  ctx.sel = selectors_.get();
  ctx.nonlinear = nonlinear_.get();
  ctx.weights = &weights_;
  ctx.options = &options_;
  ctx.x_bar0 = &x_bar0_;
  for (int i = 0; i < p.n(); ++i) {
    estimators_.push_back(std::make_unique<LocalEstimator>(i, ctx));
  }
  ledger_.per_subsystem.assign(p.n(), {});
  ledger_.increments.assign(p.n(), {});
}

ExchangeSnapshot Coordinator::snapshot() const {
  ExchangeSnapshot snap = table_;
  snap.stamp = instant() - 1;
  return snap;
}

const ArrivalCostState* Coordinator::arrival_chain(int i) const {
  const auto& c = estimators_.at(i)->chain();
  return c ? &*c : nullptr;
}

InstantResult Coordinator::advance(const Eigen::VectorXd& y_k) {
  const Partition& p = partition();
  require_size(y_k, p.ny(), "measurement");
  if (!y_k.allFinite()) throw std::invalid_argument("measurement is not finite");
  const int k = instant();
  const ExchangeSnapshot snap = snapshot();
  snap.assert_causal();
  std::vector<Eigen::VectorXd> ys = ys_;
  ys.push_back(y_k);

  const int n = p.n();
  std::vector<LocalEstimator::Step> steps(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](int i) {
    try {
      steps[i] = estimators_[i]->compute(k, snap, ys);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (options_.parallel && n > 1) {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(work, i);
    for (auto& t : pool) t.join();
  } else {
    for (int i = 0; i < n; ++i) work(i);
  }
  for (int i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      std::ostringstream os;
      os << "estimator " << i + 1 << " failed at instant " << k << ": " << e.what();
      throw SubsystemError(os.str(), i);
    }
  }

  InstantResult result;
  result.k = k;
  result.estimate.resize(p.nx());
  ys_ = std::move(ys);
  if (k > 0) {
    table_.states.push_back(Eigen::VectorXd::Zero(p.nx()));
    table_.produced_at.push_back(k);
  }
  double collective = 0.0;
  for (int i = 0; i < n; ++i) {
    const LocalSolution& sol = steps[i].solution;
    for (int j = std::max(sol.start, 1); j <= k; ++j) {
      p.set_local_state(table_.states[j], i, sol.x[j - sol.start]);
      table_.produced_at[j] = k;
    }
    p.set_local_state(result.estimate, i, sol.x.back());
    const double prev = ledger_.per_subsystem[i].empty() ? 0.0 : ledger_.per_subsystem[i].back();
    ledger_.increments[i].push_back(sol.objective);
    ledger_.per_subsystem[i].push_back(prev + sol.objective);
    collective += prev + sol.objective;
    result.solutions.push_back(sol);
    result.arrivals.push_back(steps[i].arrival);
    estimators_[i]->commit(std::move(steps[i]));
  }
  table_.stamp = k;
  ledger_.collective.push_back(collective);
  if (record_snapshots_) history_.push_back(snap);
  return result;
}

EstimateRecord run_horizon(Coordinator& coordinator, const PlantTrace& trace, int T) {
  if (T < 1) throw std::invalid_argument("horizon T must be >= 1");
  if (static_cast<int>(trace.measurements.size()) < T) {
    throw std::invalid_argument("plant trace is shorter than the horizon");
  }
  EstimateRecord rec;
  for (int k = 0; k < T; ++k) {
    try {
      InstantResult r = coordinator.advance(trace.measurements[k]);
      rec.estimates.push_back(r.estimate);
      if (k < static_cast<int>(trace.states.size())) {
        rec.truth.push_back(trace.states[k]);
      }
      rec.instants.push_back(std::move(r));
      rec.completed = k + 1;
    } catch (const SubsystemError& e) {
      rec.error = e.what();
      rec.error_subsystem = e.subsystem();
      break;
    } catch (const std::exception& e) {
      rec.error = e.what();
      break;
    }
  }
  rec.ledger = coordinator.ledger();
  return rec;
}

}  // namespace dmhe
