#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dmhe/coordinator.hpp"
#include "dmhe/errors.hpp"
#include "dmhe/harness.hpp"
#include "dmhe/model_io.hpp"
#include "dmhe/plant.hpp"
#include "dmhe/quad_fusion.hpp"
#include "dmhe/stability.hpp"

namespace py = pybind11;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Rows are instants.
MatrixXd to_rows(const std::vector<VectorXd>& seq) {
  if (seq.empty()) return MatrixXd(0, 0);
  MatrixXd out(seq.size(), seq.front().size());
  for (size_t k = 0; k < seq.size(); ++k) out.row(k) = seq[k].transpose();
  return out;
}

dmhe::CoordinatorOptions make_options(dmhe::Variant variant, int N, bool parallel,
                                      const std::vector<dmhe::ConstraintSet>& constraints) {
  dmhe::CoordinatorOptions o;
  o.variant = dmhe::VariantConfig::make(variant, N);
  o.parallel = parallel;
  o.constraints = constraints;
  return o;
}

}  // namespace

PYBIND11_MODULE(_dmhe, m) {
  m.doc() = "Partition-based distributed moving horizon estimation.";

  py::register_exception<dmhe::SubsystemError>(m, "SubsystemError", PyExc_RuntimeError);
  py::register_exception<dmhe::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<dmhe::NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<dmhe::InfeasibleError>(m, "InfeasibleError", PyExc_RuntimeError);
  py::register_exception<dmhe::EvaluationError>(m, "EvaluationError", PyExc_RuntimeError);
  // Re-raise with the failing subsystem index attached.
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const dmhe::SubsystemError& e) {
      py::object type = py::module_::import("dmhe._dmhe").attr("SubsystemError");
      py::object inst = type(e.what());
      inst.attr("subsystem") = e.subsystem();
      PyErr_SetObject(type.ptr(), inst.ptr());
    }
  });

  py::class_<dmhe::FusionResult>(m, "FusionResult")
      .def_readonly("H", &dmhe::FusionResult::H)
      .def_readonly("sigma", &dmhe::FusionResult::sigma)
      .def_readonly("pi", &dmhe::FusionResult::pi);
  m.def("fuse_quadratics", &dmhe::fuse_quadratics, py::arg("a"), py::arg("A"), py::arg("C"),
        py::arg("b"), py::arg("B"),
        "Combine |x-a|^2_{A^-1} + |Cx-b|^2_{B^-1} into |x-sigma|^2_{H^-1} + pi.");
  m.def("woodbury_inverse", &dmhe::woodbury_inverse, py::arg("A"), py::arg("B"), py::arg("C"),
        py::arg("D"), "(A + BDC)^-1 through the Woodbury identity.");
  py::class_<dmhe::NormReduction>(m, "NormReduction")
      .def_readonly("W", &dmhe::NormReduction::W)
      .def_readonly("b", &dmhe::NormReduction::b)
      .def_readonly("residual", &dmhe::NormReduction::residual);
  m.def("reduce_norm_through_matrix", &dmhe::reduce_norm_through_matrix, py::arg("C"), py::arg("A"),
        py::arg("a"));

  py::class_<dmhe::Partition>(m, "Partition")
      .def_property_readonly("n", &dmhe::Partition::n)
      .def_property_readonly("nx", &dmhe::Partition::nx)
      .def_property_readonly("ny", &dmhe::Partition::ny)
      .def_property_readonly("state_dims", &dmhe::Partition::state_dims)
      .def_property_readonly("output_dims", &dmhe::Partition::output_dims)
      .def_property_readonly("interaction_graph", &dmhe::Partition::interaction_graph);

  py::class_<dmhe::PartitionedLinearModel>(m, "LinearModel")
      .def(py::init<dmhe::BlockGrid, std::vector<MatrixXd>, std::vector<MatrixXd>,
                    std::vector<MatrixXd>, std::vector<MatrixXd>>(),
           py::arg("A_blocks"), py::arg("C_blocks"), py::arg("Q_blocks"), py::arg("R_blocks"),
           py::arg("P0_blocks"))
      .def_property_readonly("partition", &dmhe::PartitionedLinearModel::partition)
      .def_property_readonly("A", &dmhe::PartitionedLinearModel::A)
      .def_property_readonly("C", &dmhe::PartitionedLinearModel::C)
      .def_property_readonly("Q", &dmhe::PartitionedLinearModel::Q)
      .def_property_readonly("R", &dmhe::PartitionedLinearModel::R)
      .def_property_readonly("P0", &dmhe::PartitionedLinearModel::P0)
      .def("to_yaml",
           [](const dmhe::PartitionedLinearModel& s) { return dmhe::linear_model_to_yaml(s); });
  m.def("load_linear_model", &dmhe::load_linear_model, py::arg("path"));
  m.def("parse_linear_model", &dmhe::parse_linear_model, py::arg("text"));

  m.def(
      "simulate_linear",
      [](const dmhe::PartitionedLinearModel& model, const VectorXd& x0, int T, double process_std,
         double measurement_std, std::uint64_t seed) {
        const auto tr = dmhe::simulate_linear(model, x0, T,
                                              dmhe::NoiseSpec{process_std, measurement_std, seed});
        return py::make_tuple(to_rows(tr.states), to_rows(tr.measurements));
      },
      py::arg("model"), py::arg("x0"), py::arg("T"), py::arg("process_std") = 0.0,
      py::arg("measurement_std") = 0.0, py::arg("seed") = 0,
      "Simulate the plant; returns (states, measurements) with one row per instant.");

  py::enum_<dmhe::Variant>(m, "Variant")
      .value("proposed", dmhe::Variant::kProposed)
      .value("dmhe1", dmhe::Variant::kDmhe1)
      .value("dmhe2", dmhe::Variant::kDmhe2)
      .value("dmhe3", dmhe::Variant::kDmhe3)
      .value("fie_oracle", dmhe::Variant::kFieOracle);
  m.def("parse_variant", &dmhe::parse_variant, py::arg("name"));

  py::class_<dmhe::ConstraintSet>(m, "ConstraintSet")
      .def(py::init<>())
      .def_readwrite("x_lower", &dmhe::ConstraintSet::x_lower)
      .def_readwrite("x_upper", &dmhe::ConstraintSet::x_upper)
      .def_readwrite("w_lower", &dmhe::ConstraintSet::w_lower)
      .def_readwrite("w_upper", &dmhe::ConstraintSet::w_upper);

  py::class_<dmhe::Coordinator>(m, "Coordinator")
      .def(py::init([](const dmhe::PartitionedLinearModel& model, const VectorXd& x_bar0,
                       dmhe::Variant variant, int N, bool parallel,
                       const std::vector<dmhe::ConstraintSet>& constraints) {
             return std::make_unique<dmhe::Coordinator>(
                 model, x_bar0, make_options(variant, N, parallel, constraints));
           }),
           py::arg("model"), py::arg("x_bar0"), py::arg("variant") = dmhe::Variant::kProposed,
           py::arg("N") = 4, py::arg("parallel") = false,
           py::arg("constraints") = std::vector<dmhe::ConstraintSet>{})
      .def(
          "advance", [](dmhe::Coordinator& c, const VectorXd& y) { return c.advance(y).estimate; },
          py::arg("y"), "Process the next measurement and return the stacked estimate.")
      .def_property_readonly("instant", &dmhe::Coordinator::instant)
      .def_property_readonly("ledger",
                             [](const dmhe::Coordinator& c) { return c.ledger().collective; })
      .def_property_readonly("subsystem_ledger",
                             [](const dmhe::Coordinator& c) { return c.ledger().per_subsystem; });

  py::class_<dmhe::StabilityReport>(m, "StabilityReport")
      .def_readonly("N", &dmhe::StabilityReport::N)
      .def_readonly("rho", &dmhe::StabilityReport::rho)
      .def_readonly("rho_available", &dmhe::StabilityReport::rho_available)
      .def_property_readonly("prior_margin", &dmhe::StabilityReport::prior_margin)
      .def_property_readonly("assumption1_holds_at_prior",
                             &dmhe::StabilityReport::assumption1_holds_at_prior)
      .def("__str__", &dmhe::format_stability_report);
  m.def(
      "stability_report",
      [](const dmhe::PartitionedLinearModel& model, int N) {
        return dmhe::stability_report(model, N, nullptr);
      },
      py::arg("model"), py::arg("N"));

  py::class_<dmhe::ExperimentConfig>(m, "ExperimentConfig")
      .def_property(
          "variant", [](const dmhe::ExperimentConfig& c) { return c.variant; },
          [](dmhe::ExperimentConfig& c, dmhe::Variant v) { c.variant = v; })
      .def_readwrite("N", &dmhe::ExperimentConfig::N)
      .def_readwrite("T", &dmhe::ExperimentConfig::T)
      .def_readwrite("seeds", &dmhe::ExperimentConfig::seeds)
      .def_readwrite("process_std", &dmhe::ExperimentConfig::process_std)
      .def_readwrite("measurement_std", &dmhe::ExperimentConfig::measurement_std)
      .def_readwrite("output_dir", &dmhe::ExperimentConfig::output_dir)
      .def_readwrite("workers", &dmhe::ExperimentConfig::workers)
      .def("validate", &dmhe::ExperimentConfig::validate)
      .def("to_yaml",
           [](const dmhe::ExperimentConfig& c) { return dmhe::experiment_config_to_yaml(c); });
  m.def("load_experiment_config", &dmhe::load_experiment_config, py::arg("path"));
  m.def("parse_experiment_config", &dmhe::parse_experiment_config, py::arg("text"),
        py::arg("base_dir") = ".");

  py::class_<dmhe::RunOutcome>(m, "RunOutcome")
      .def_readonly("label", &dmhe::RunOutcome::label)
      .def_readonly("variant", &dmhe::RunOutcome::variant)
      .def_readonly("seed", &dmhe::RunOutcome::seed)
      .def_readonly("rmse", &dmhe::RunOutcome::rmse)
      .def_readonly("completed", &dmhe::RunOutcome::completed)
      .def_readonly("error", &dmhe::RunOutcome::error);
  py::class_<dmhe::ComparisonRow>(m, "ComparisonRow")
      .def_readonly("label", &dmhe::ComparisonRow::label)
      .def_readonly("variant", &dmhe::ComparisonRow::variant)
      .def_readonly("median", &dmhe::ComparisonRow::median)
      .def_readonly("runs", &dmhe::ComparisonRow::runs);

  m.def(
      "run_experiment",
      [](const dmhe::ExperimentConfig& cfg) {
        py::gil_scoped_release release;
        return dmhe::run_experiment(cfg).runs;
      },
      py::arg("config"), "Run the configured variant over every seed and write reports.");
  m.def(
      "run_comparison",
      [](const dmhe::ExperimentConfig& cfg) {
        py::gil_scoped_release release;
        return dmhe::run_comparison(cfg);
      },
      py::arg("config"));
  m.def("check_stability", &dmhe::check_stability, py::arg("config"));
  m.def(
      "compute_rmse",
      [](const MatrixXd& truth, const MatrixXd& estimates) {
        if (truth.rows() != estimates.rows() || truth.cols() != estimates.cols()) {
          throw std::invalid_argument("compute_rmse: shapes differ");
        }
        std::vector<VectorXd> t, e;
        for (Eigen::Index k = 0; k < truth.rows(); ++k) {
          t.push_back(truth.row(k).transpose());
          e.push_back(estimates.row(k).transpose());
        }
        return dmhe::compute_rmse(t, e, dmhe::ScalingMap::identity(truth.cols()));
      },
      py::arg("truth"), py::arg("estimates"));
}
