#include "dmhe/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "dmhe/errors.hpp"
#include "dmhe/linalg.hpp"
#include "dmhe/model_io.hpp"
#include "yaml_util.hpp"

namespace dmhe {

namespace fs = std::filesystem;
using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string to_string(PlantKind kind) {
  return kind == PlantKind::kLinear ? "linear" : "reactor_separator";
}

PlantKind parse_plant_kind(const std::string& name) {
  if (name == "linear") return PlantKind::kLinear;
  if (name == "reactor_separator") return PlantKind::kReactorSeparator;
  throw ConfigError("plant: unknown plant '" + name + "' (expected linear or reactor_separator)");
}

namespace {

bool same_vector(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index j = 0; j < a.size(); ++j) {
    if (!(a(j) == b(j))) return false;
  }
  return true;
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

WeightSpec parse_weights(const YAML::Node& node, const std::string& where) {
  WeightSpec w;
  w.P0 = yaml::to_double(yaml::child(node, "P0", where), where + ".P0");
  w.Q = yaml::to_double(yaml::child(node, "Q", where), where + ".Q");
  w.R = yaml::to_double(yaml::child(node, "R", where), where + ".R");
  for (double v : {w.P0, w.Q, w.R}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(where + ": weights must be finite and positive");
    }
  }
  return w;
}

void emit_weights(YAML::Emitter& out, const WeightSpec& w) {
  out << YAML::Flow << YAML::BeginMap << YAML::Key << "P0" << YAML::Value << w.P0 << YAML::Key
      << "Q" << YAML::Value << w.Q << YAML::Key << "R" << YAML::Value << w.R << YAML::EndMap;
}

Variant variant_from(const std::string& name, const std::string& where) {
  try {
    return parse_variant(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

VectorXd optional_vector(const YAML::Node& node, const char* key, const std::string& where) {
  if (!node[key]) return {};
  return yaml::to_vector(node[key], where + "." + key);
}

}  // namespace

bool BoxSpec::operator==(const BoxSpec& o) const {
  return same_vector(x_lower, o.x_lower) && same_vector(x_upper, o.x_upper) &&
         same_vector(w_lower, o.w_lower) && same_vector(w_upper, o.w_upper);
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
  return plant == o.plant && plant_file == o.plant_file && variant == o.variant && N == o.N &&
         T == o.T && seeds == o.seeds && same_vector(x0, o.x0) && same_vector(x_bar0, o.x_bar0) &&
         x_bar0_factor == o.x_bar0_factor && weights == o.weights && process_std == o.process_std &&
         measurement_std == o.measurement_std && constraints == o.constraints &&
         comparisons == o.comparisons && output_dir == o.output_dir && workers == o.workers;
}

void ExperimentConfig::validate() const {
  if (N < 1) throw ConfigError("N must be >= 1");
  if (T < 1) throw ConfigError("T must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (plant_file.empty()) throw ConfigError("plant_file is required");
  if (!(process_std >= 0.0) || !(measurement_std >= 0.0)) {
    throw ConfigError("noise standard deviations must be >= 0");
  }
  if (!std::isfinite(x_bar0_factor)) {
    throw ConfigError("x_bar0_factor must be finite");
  }
  if (plant == PlantKind::kReactorSeparator) {
    if (!weights) throw ConfigError("the reactor-separator plant needs weights");
    if (variant == Variant::kFieOracle) {
      throw ConfigError("variant fie-oracle requires a linear plant");
    }
  }
  for (const auto& c : comparisons) {
    if (c.label.empty()) throw ConfigError("comparisons: empty label");
    if (c.N && *c.N < 1) throw ConfigError("comparisons: N must be >= 1");
    if (plant == PlantKind::kReactorSeparator && c.variant == Variant::kFieOracle) {
      throw ConfigError("variant fie-oracle requires a linear plant");
    }
  }
  for (size_t a = 0; a < comparisons.size(); ++a) {
    for (size_t b = a + 1; b < comparisons.size(); ++b) {
      if (comparisons[a].label == comparisons[b].label) {
        throw ConfigError("comparisons: duplicate label '" + comparisons[a].label + "'");
      }
    }
  }
}

std::string ExperimentConfig::resolve(const std::string& path) const {
  const fs::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).lexically_normal().string();
}

ExperimentConfig parse_experiment_config(const std::string& yaml_text,
                                         const std::string& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!root.IsMap()) throw ConfigError("config: expected a mapping");
  const std::string w = "config";
  ExperimentConfig c;
  c.base_dir = base_dir;
  c.plant = parse_plant_kind(yaml::to_string(yaml::child(root, "plant", w), "plant"));
  c.plant_file = yaml::to_string(yaml::child(root, "plant_file", w), "plant_file");
  if (root["variant"]) {
    c.variant = variant_from(yaml::to_string(root["variant"], "variant"), "variant");
  }
  if (root["N"]) c.N = yaml::to_int(root["N"], "N");
  if (root["T"]) c.T = yaml::to_int(root["T"], "T");
  if (root["seeds"]) {
    c.seeds.clear();
    for (int s : yaml::to_int_list(root["seeds"], "seeds")) {
      if (s < 0) throw ConfigError("seeds must be non-negative");
      c.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  c.x0 = optional_vector(root, "x0", w);
  c.x_bar0 = optional_vector(root, "x_bar0", w);
  if (root["x_bar0_factor"]) {
    c.x_bar0_factor = yaml::to_double(root["x_bar0_factor"], "x_bar0_factor");
  }
  if (root["weights"]) c.weights = parse_weights(root["weights"], "weights");
  if (root["noise"]) {
    const auto n = root["noise"];
    if (n["process_std"]) {
      c.process_std = yaml::to_double(n["process_std"], "noise.process_std");
    }
    if (n["measurement_std"]) {
      c.measurement_std = yaml::to_double(n["measurement_std"], "noise.measurement_std");
    }
  }
  if (root["constraints"]) {
    const auto cs = root["constraints"];
    if (!cs.IsSequence()) throw ConfigError("constraints: expected a list");
    for (size_t i = 0; i < cs.size(); ++i) {
      const std::string cw = "constraints[" + std::to_string(i) + "]";
      BoxSpec b;
      b.x_lower = optional_vector(cs[i], "x_lower", cw);
      b.x_upper = optional_vector(cs[i], "x_upper", cw);
      b.w_lower = optional_vector(cs[i], "w_lower", cw);
      b.w_upper = optional_vector(cs[i], "w_upper", cw);
      c.constraints.push_back(std::move(b));
    }
  }
  if (root["comparisons"]) {
    const auto cs = root["comparisons"];
    if (!cs.IsSequence()) throw ConfigError("comparisons: expected a list");
    for (size_t i = 0; i < cs.size(); ++i) {
      const std::string cw = "comparisons[" + std::to_string(i) + "]";
      ComparisonEntry e;
      e.variant = variant_from(yaml::to_string(yaml::child(cs[i], "variant", cw), cw), cw);
      e.label = cs[i]["label"] ? yaml::to_string(cs[i]["label"], cw) : to_string(e.variant);
      if (cs[i]["weights"]) e.weights = parse_weights(cs[i]["weights"], cw);
      if (cs[i]["N"]) e.N = yaml::to_int(cs[i]["N"], cw + ".N");
      c.comparisons.push_back(std::move(e));
    }
  }
  if (root["output_dir"]) {
    c.output_dir = yaml::to_string(root["output_dir"], "output_dir");
  }
  if (root["workers"]) c.workers = yaml::to_int(root["workers"], "workers");
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const fs::path parent = fs::path(path).parent_path();
  return parse_experiment_config(ss.str(), parent.empty() ? "." : parent.string());
}

std::string experiment_config_to_yaml(const ExperimentConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "plant" << YAML::Value << to_string(c.plant);
  out << YAML::Key << "plant_file" << YAML::Value << c.plant_file;
  out << YAML::Key << "variant" << YAML::Value << to_string(c.variant);
  out << YAML::Key << "N" << YAML::Value << c.N;
  out << YAML::Key << "T" << YAML::Value << c.T;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (auto s : c.seeds) out << s;
  out << YAML::EndSeq;
  if (c.x0.size() > 0) {
    out << YAML::Key << "x0" << YAML::Value;
    yaml::emit_vector(out, c.x0);
  }
  if (c.x_bar0.size() > 0) {
    out << YAML::Key << "x_bar0" << YAML::Value;
    yaml::emit_vector(out, c.x_bar0);
  }
  out << YAML::Key << "x_bar0_factor" << YAML::Value << c.x_bar0_factor;
  if (c.weights) {
    out << YAML::Key << "weights" << YAML::Value;
    emit_weights(out, *c.weights);
  }
  out << YAML::Key << "noise" << YAML::Value << YAML::Flow << YAML::BeginMap << YAML::Key
      << "process_std" << YAML::Value << c.process_std << YAML::Key << "measurement_std"
      << YAML::Value << c.measurement_std << YAML::EndMap;
  if (!c.constraints.empty()) {
    out << YAML::Key << "constraints" << YAML::Value << YAML::BeginSeq;
    for (const auto& b : c.constraints) {
      out << YAML::BeginMap;
      const std::pair<const char*, const VectorXd*> fields[] = {{"x_lower", &b.x_lower},
                                                                {"x_upper", &b.x_upper},
                                                                {"w_lower", &b.w_lower},
                                                                {"w_upper", &b.w_upper}};
      for (const auto& [key, v] : fields) {
        if (v->size() == 0) continue;
        out << YAML::Key << key << YAML::Value;
        yaml::emit_vector(out, *v);
      }
      out << YAML::EndMap;
    }
    out << YAML::EndSeq;
  }
  if (!c.comparisons.empty()) {
    out << YAML::Key << "comparisons" << YAML::Value << YAML::BeginSeq;
    for (const auto& e : c.comparisons) {
      out << YAML::BeginMap;
      out << YAML::Key << "label" << YAML::Value << e.label;
      out << YAML::Key << "variant" << YAML::Value << to_string(e.variant);
      if (e.weights) {
        out << YAML::Key << "weights" << YAML::Value;
        emit_weights(out, *e.weights);
      }
      if (e.N) out << YAML::Key << "N" << YAML::Value << *e.N;
      out << YAML::EndMap;
    }
    out << YAML::EndSeq;
  }
  out << YAML::Key << "output_dir" << YAML::Value << c.output_dir;
  out << YAML::Key << "workers" << YAML::Value << c.workers;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

PlantSetup prepare_plant(const ExperimentConfig& cfg) {
  cfg.validate();
  PlantSetup s;
  s.kind = cfg.plant;
  const std::string path = cfg.resolve(cfg.plant_file);
  if (cfg.plant == PlantKind::kLinear) {
    PartitionedLinearModel model = load_linear_model(path);
    if (cfg.weights) {
      const Partition& p = model.partition();
      std::vector<MatrixXd> Q, R, P0;
      for (int i = 0; i < p.n(); ++i) {
        const int d = p.state_dim(i), m = p.output_dim(i);
        Q.push_back(cfg.weights->Q * MatrixXd::Identity(d, d));
        R.push_back(cfg.weights->R * MatrixXd::Identity(m, m));
        P0.push_back(cfg.weights->P0 * MatrixXd::Identity(d, d));
      }
      model = model.with_weights(Q, R, P0);
    }
    s.partition = model.partition();
    s.scaling = ScalingMap::identity(s.partition.nx());
    if (cfg.x0.size() == 0) {
      throw ConfigError("x0 is required for a linear plant");
    }
    s.linear = std::move(model);
  } else {
    s.reactor = ReactorSeparatorConfig::load(path);
    s.scaling = ScalingMap::from_reference(s.reactor->x0);
    s.partition = reactor_separator_system(*s.reactor, s.scaling).partition();
  }
  s.x0 = cfg.x0.size() > 0 ? cfg.x0 : s.reactor->x0;
  s.x_bar0 = cfg.x_bar0.size() > 0 ? cfg.x_bar0 : VectorXd(cfg.x_bar0_factor * s.x0);
  const int nx = s.partition.nx();
  if (s.x0.size() != nx) {
    throw ConfigError(fmt::format("x0 has {} entries, the plant has {} states", s.x0.size(), nx));
  }
  if (s.x_bar0.size() != nx) {
    throw ConfigError(
        fmt::format("x_bar0 has {} entries, the plant has {} states", s.x_bar0.size(), nx));
  }
  if (!cfg.constraints.empty() && static_cast<int>(cfg.constraints.size()) != s.partition.n()) {
    throw ConfigError(fmt::format("constraints: expected one entry per subsystem ({}), got {}",
                                  s.partition.n(), cfg.constraints.size()));
  }
  for (size_t i = 0; i < cfg.constraints.size(); ++i) {
    const int d = s.partition.state_dim(static_cast<int>(i));
    const BoxSpec& b = cfg.constraints[i];
    for (const VectorXd* v : {&b.x_lower, &b.x_upper, &b.w_lower, &b.w_upper}) {
      if (v->size() != 0 && v->size() != d) {
        throw ConfigError(fmt::format("constraints[{}]: bounds must have {} entries", i, d));
      }
    }
  }
  return s;
}

double compute_rmse(const std::vector<VectorXd>& truth, const std::vector<VectorXd>& estimates,
                    const ScalingMap& scaling) {
  if (truth.size() != estimates.size()) {
    throw std::invalid_argument(fmt::format("compute_rmse: {} truth instants but {} estimates",
                                            truth.size(), estimates.size()));
  }
  if (truth.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  long count = 0;
  for (size_t k = 0; k < truth.size(); ++k) {
    const VectorXd e = apply_scaling(scaling, truth[k]) - apply_scaling(scaling, estimates[k]);
    sum += e.squaredNorm();
    count += e.size();
  }
  return std::sqrt(sum / static_cast<double>(count));
}

bool RmseReport::all_completed() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunOutcome& r) { return r.error.empty(); });
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const size_t m = values.size() / 2;
  return values.size() % 2 == 1 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

namespace {

std::vector<ConstraintSet> scaled_constraints(const ExperimentConfig& cfg,
                                              const PlantSetup& plant) {
  std::vector<ConstraintSet> out;
  for (size_t i = 0; i < cfg.constraints.size(); ++i) {
    const BoxSpec& b = cfg.constraints[i];
    const VectorXd s =
        plant.scaling.factors.segment(plant.partition.state_offset(static_cast<int>(i)),
                                      plant.partition.state_dim(static_cast<int>(i)));
    auto scale = [&](const VectorXd& v) -> VectorXd {
      return v.size() == 0 ? v : VectorXd(v.cwiseQuotient(s));
    };
    ConstraintSet c;
    c.x_lower = scale(b.x_lower);
    c.x_upper = scale(b.x_upper);
    c.w_lower = scale(b.w_lower);
    c.w_upper = scale(b.w_upper);
    out.push_back(std::move(c));
  }
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

void write_run_files(const fs::path& dir, const PlantSetup& plant, const PlantTrace& trace,
                     const EstimateRecord& rec, double sampling_period) {
  fs::create_directories(dir);
  const Partition& p = plant.partition;
  const int nx = p.nx();

  std::string traj = "k,t";
  for (int j = 0; j < nx; ++j) traj += fmt::format(",x{}", j + 1);
  const int ny = trace.measurements.empty() ? 0 : static_cast<int>(trace.measurements[0].size());
  for (int j = 0; j < ny; ++j) traj += fmt::format(",y{}", j + 1);
  traj += "\n";
  // Measurement scales: the scaled temperatures for the reactor, none for
  // linear plants.
  VectorXd yscale = VectorXd::Ones(ny);
  if (plant.kind == PlantKind::kReactorSeparator) {
    for (int i = 0; i < ny; ++i) yscale(i) = plant.scaling.factors(3 * i + 2);
  }
  for (size_t k = 0; k < trace.states.size(); ++k) {
    traj += fmt::format("{},{}", k, num(static_cast<double>(k) * sampling_period));
    const VectorXd x = invert_scaling(plant.scaling, trace.states[k]);
    for (int j = 0; j < nx; ++j) traj += "," + num(x(j));
    const VectorXd y = trace.measurements[k].cwiseProduct(yscale);
    for (int j = 0; j < ny; ++j) traj += "," + num(y(j));
    traj += "\n";
  }
  write_file(dir / "trajectory.csv", traj);

  std::string est = "k,subsystem,state_index,estimate,truth,scaled_error\n";
  for (size_t k = 0; k < rec.estimates.size(); ++k) {
    const VectorXd xe = invert_scaling(plant.scaling, rec.estimates[k]);
    const VectorXd xt = invert_scaling(plant.scaling, rec.truth[k]);
    const VectorXd err = rec.truth[k] - rec.estimates[k];
    for (int i = 0; i < p.n(); ++i) {
      for (int a = 0; a < p.state_dim(i); ++a) {
        const int j = p.state_offset(i) + a;
        est += fmt::format("{},{},{},{},{},{}\n", k, i + 1, a + 1, num(xe(j)), num(xt(j)),
                           num(err(j)));
      }
    }
  }
  write_file(dir / "estimates.csv", est);

  std::string arr = "k,subsystem,trace_P,min_eigenvalue_P\n";
  for (const InstantResult& inst : rec.instants) {
    for (size_t i = 0; i < inst.arrivals.size(); ++i) {
      if (!inst.arrivals[i]) continue;
      const MatrixXd& P = inst.arrivals[i]->P;
      arr += fmt::format("{},{},{},{}\n", inst.k, i + 1, num(P.trace()),
                         num(min_eigenvalue(symmetrize(P))));
    }
  }
  write_file(dir / "arrival.csv", arr);

  std::string led = "k,collective";
  for (int i = 0; i < p.n(); ++i) led += fmt::format(",subsystem{}", i + 1);
  led += "\n";
  for (size_t k = 0; k < rec.ledger.collective.size(); ++k) {
    led += fmt::format("{},{}", k, num(rec.ledger.collective[k]));
    for (int i = 0; i < p.n(); ++i) {
      const auto& per = rec.ledger.per_subsystem[i];
      led += "," + (k < per.size() ? num(per[k]) : std::string("nan"));
    }
    led += "\n";
  }
  write_file(dir / "ledger.csv", led);
}

std::string run_dir_for(const ExperimentConfig& cfg, const std::string& label, std::uint64_t seed) {
  return (fs::path(cfg.output_dir) / label / fmt::format("seed_{}", seed)).string();
}

std::string rmse_row(const RunOutcome& r) {
  std::string err = r.error;
  std::replace(err.begin(), err.end(), '"', '\'');
  std::replace(err.begin(), err.end(), '\n', ' ');
  return fmt::format(
      "{},{},{},{},{},{},\"{}\"\n", r.label, to_string(r.variant), r.seed, num(r.rmse), r.completed,
      r.error_subsystem < 0 ? std::string() : std::to_string(r.error_subsystem + 1), err);
}

const char* kRmseHeader = "label,variant,seed,rmse,completed,error_subsystem,error\n";

// Runs jobs in order, at most `workers` at a time.
template <typename Job>
std::vector<RunArtifacts> run_jobs(const std::vector<Job>& jobs, int workers) {
  std::vector<RunArtifacts> out(jobs.size());
  if (workers <= 1) {
    for (size_t j = 0; j < jobs.size(); ++j) out[j] = jobs[j]();
    return out;
  }
  for (size_t start = 0; start < jobs.size(); start += workers) {
    std::vector<std::future<RunArtifacts>> batch;
    const size_t end = std::min(jobs.size(), start + workers);
    for (size_t j = start; j < end; ++j) {
      batch.push_back(std::async(std::launch::async, jobs[j]));
    }
    for (size_t j = start; j < end; ++j) out[j] = batch[j - start].get();
  }
  return out;
}

}  // namespace

RunArtifacts run_single(const ExperimentConfig& cfg, const PlantSetup& plant,
                        const ComparisonEntry& entry, std::uint64_t seed,
                        const std::string& run_dir) {
  const int N = entry.N.value_or(cfg.N);
  const std::optional<WeightSpec> weights = entry.weights ? entry.weights : cfg.weights;
  NoiseSpec noise{cfg.process_std, cfg.measurement_std, seed};

  CoordinatorOptions opt;
  opt.variant = VariantConfig::make(entry.variant, N);
  opt.constraints = scaled_constraints(cfg, plant);

  RunArtifacts art;
  art.outcome.label = entry.label;
  art.outcome.variant = entry.variant;
  art.outcome.seed = seed;
  double sampling_period = 1.0;
  std::optional<PartitionedLinearModel> run_model;

  if (plant.kind == PlantKind::kLinear) {
    PartitionedLinearModel model = *plant.linear;
    if (entry.weights) {
      const Partition& p = model.partition();
      std::vector<MatrixXd> Q, R, P0;
      for (int i = 0; i < p.n(); ++i) {
        const int d = p.state_dim(i), m = p.output_dim(i);
        Q.push_back(entry.weights->Q * MatrixXd::Identity(d, d));
        R.push_back(entry.weights->R * MatrixXd::Identity(m, m));
        P0.push_back(entry.weights->P0 * MatrixXd::Identity(d, d));
      }
      model = model.with_weights(Q, R, P0);
    }
    art.trace = simulate_linear(model, plant.x0, cfg.T, noise);
    Coordinator coord(model, plant.x_bar0, opt);
    art.record = run_horizon(coord, art.trace, cfg.T);
    run_model = std::move(model);
  } else {
    const ReactorSeparatorConfig& rc = *plant.reactor;
    sampling_period = rc.sampling_period;
    art.trace = simulate_reactor_separator(rc, plant.x0, cfg.T, noise, plant.scaling);
    NonlinearWeights w;
    for (int i = 0; i < 3; ++i) {
      w.Q.push_back(weights->Q * MatrixXd::Identity(3, 3));
      w.P0.push_back(weights->P0 * MatrixXd::Identity(3, 3));
    }
    w.R = weights->R * MatrixXd::Identity(3, 3);
    Coordinator coord(reactor_separator_system(rc, plant.scaling), w,
                      apply_scaling(plant.scaling, plant.x_bar0), opt);
    art.record = run_horizon(coord, art.trace, cfg.T);
  }

  const EstimateRecord& rec = art.record;
  art.outcome.completed = rec.completed;
  art.outcome.error = rec.error;
  art.outcome.error_subsystem = rec.error_subsystem;
  art.outcome.rmse =
      compute_rmse(rec.truth, rec.estimates, ScalingMap::identity(plant.partition.nx()));

  if (!run_dir.empty()) {
    write_run_files(run_dir, plant, art.trace, rec, sampling_period);
    if (run_model) {
      write_file(fs::path(run_dir) / "stability.txt",
                 format_stability_report(stability_report(*run_model, N, &rec)));
    }
  }
  return art;
}

RmseReport run_experiment(const ExperimentConfig& cfg) {
  const PlantSetup plant = prepare_plant(cfg);
  fs::create_directories(cfg.output_dir);
  write_file(fs::path(cfg.output_dir) / "config.yaml", experiment_config_to_yaml(cfg));
  const ComparisonEntry entry{to_string(cfg.variant), cfg.variant, {}, {}};
  std::vector<std::function<RunArtifacts()>> jobs;
  for (std::uint64_t seed : cfg.seeds) {
    jobs.push_back([&cfg, &plant, entry, seed] {
      return run_single(cfg, plant, entry, seed, run_dir_for(cfg, entry.label, seed));
    });
  }
  RmseReport report;
  std::string table = kRmseHeader;
  for (RunArtifacts& a : run_jobs(jobs, cfg.workers)) {
    table += rmse_row(a.outcome);
    report.runs.push_back(std::move(a.outcome));
  }
  write_file(fs::path(cfg.output_dir) / "rmse.csv", table);
  return report;
}

std::vector<ComparisonRow> run_comparison(const ExperimentConfig& cfg) {
  const PlantSetup plant = prepare_plant(cfg);
  fs::create_directories(cfg.output_dir);
  write_file(fs::path(cfg.output_dir) / "config.yaml", experiment_config_to_yaml(cfg));
  std::vector<ComparisonEntry> entries = cfg.comparisons;
  if (entries.empty()) entries.push_back({to_string(cfg.variant), cfg.variant, {}, {}});

  std::vector<std::function<RunArtifacts()>> jobs;
  for (const auto& e : entries) {
    for (std::uint64_t seed : cfg.seeds) {
      jobs.push_back([&cfg, &plant, e, seed] {
        return run_single(cfg, plant, e, seed, run_dir_for(cfg, e.label, seed));
      });
    }
  }
  std::vector<RunArtifacts> done = run_jobs(jobs, cfg.workers);

  std::vector<ComparisonRow> rows;
  std::string table = kRmseHeader;
  std::string summary = "label,variant,median_rmse";
  for (auto seed : cfg.seeds) summary += fmt::format(",seed_{}", seed);
  summary += "\n";
  size_t j = 0;
  for (const auto& e : entries) {
    ComparisonRow row;
    row.label = e.label;
    row.variant = e.variant;
    std::vector<double> values;
    for (size_t s = 0; s < cfg.seeds.size(); ++s, ++j) {
      table += rmse_row(done[j].outcome);
      values.push_back(done[j].outcome.rmse);
      row.runs.push_back(std::move(done[j].outcome));
    }
    row.median = median(values);
    summary += fmt::format("{},{},{}", row.label, to_string(row.variant), num(row.median));
    for (double v : values) summary += "," + num(v);
    summary += "\n";
    rows.push_back(std::move(row));
  }
  write_file(fs::path(cfg.output_dir) / "rmse.csv", table);
  write_file(fs::path(cfg.output_dir) / "compare.csv", summary);
  return rows;
}

StabilityReport check_stability(const ExperimentConfig& cfg) {
  if (cfg.plant != PlantKind::kLinear) {
    throw ConfigError("check-stability requires a linear plant");
  }
  const PlantSetup plant = prepare_plant(cfg);
  const ComparisonEntry entry{to_string(cfg.variant), cfg.variant, {}, {}};
  const RunArtifacts art = run_single(cfg, plant, entry, cfg.seeds.front(), "");
  StabilityReport report = stability_report(*plant.linear, cfg.N, &art.record);
  fs::create_directories(cfg.output_dir);
  write_file(fs::path(cfg.output_dir) / "stability.txt", format_stability_report(report));
  return report;
}

}  // namespace dmhe
