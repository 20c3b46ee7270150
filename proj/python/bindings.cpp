#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hyperite/config.hpp"
#include "hyperite/data.hpp"
#include "hyperite/eval.hpp"
#include "hyperite/gradcheck.hpp"
#include "hyperite/learners.hpp"

namespace py = pybind11;
using namespace hyperite;

namespace {

data::CausalDataset make_dataset(const data::Matrix& x, const std::vector<int>& t, const std::vector<double>& y,
                                 const std::string& outcome_type) {
  data::CausalDataset d;
  d.x = x;
  d.t = t;
  d.y = y;
  d.outcome_type = data::parse_outcome_type(outcome_type);
  d.validate();
  return d;
}

py::dict record_dict(const eval::RunRecord& r) {
  py::dict d;
  d["learner"] = r.learner;
  d["sweep_value"] = r.sweep_value;
  d["seed"] = r.seed;
  d["n_train"] = r.n_train;
  d["pehe_in"] = r.pehe_in;
  d["pehe_out"] = r.pehe_out;
  d["steps_to_best"] = r.steps_to_best;
  d["epochs"] = r.epochs;
  d["initial_val_loss"] = r.initial_val_loss;
  d["best_val_loss"] = r.best_val_loss;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Treatment effect learners with hypernetwork-generated weights";

  py::register_exception<config::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<data::CounterfactualsUnavailable>(m, "CounterfactualsUnavailable", PyExc_RuntimeError);

  m.def(
      "generate_synthetic",
      [](const std::string& config_json, std::uint64_t seed) {
        const auto cfg = config::parse_config(config_json);
        if (cfg.experiment.data.kind != eval::DataSource::Kind::synthetic) {
          throw config::ConfigError("generate_synthetic needs data.source = synthetic");
        }
        const auto d = data::generate_synthetic(cfg.experiment.data.dgp, seed);
        py::dict out;
        out["x"] = d.x;
        out["t"] = d.t;
        out["y"] = d.y;
        out["mu0"] = *d.mu0;
        out["mu1"] = *d.mu1;
        return out;
      },
      py::arg("config_json"), py::arg("seed"));

  m.def(
      "pehe",
      [](const std::vector<double>& tau_hat, const std::vector<double>& mu1, const std::vector<double>& mu0) {
        return eval::pehe(tau_hat, mu1, mu0);
      },
      py::arg("tau_hat"), py::arg("mu1"), py::arg("mu0"));
  m.def("clip_propensity", &learners::clip_propensity, py::arg("p"), py::arg("eps") = learners::kDefaultPropensityClip);
  m.def("pseudo_outcome_dr", &learners::pseudo_outcome_dr, py::arg("y"), py::arg("t"), py::arg("mu0"), py::arg("mu1"),
        py::arg("pi"));
  m.def("pseudo_outcome_ra", &learners::pseudo_outcome_ra, py::arg("y"), py::arg("t"), py::arg("mu0"), py::arg("mu1"));

  py::class_<learners::FittedLearner>(m, "FittedLearner")
      .def_property_readonly("label", [](const learners::FittedLearner& f) { return f.kind().label(); })
      .def_property_readonly("target_parameter_count", &learners::FittedLearner::target_parameter_count)
      .def_property_readonly("epochs", [](const learners::FittedLearner& f) { return f.history().epochs; })
      .def_property_readonly("best_step", [](const learners::FittedLearner& f) { return f.history().best_step; })
      .def_property_readonly("best_val_loss", [](const learners::FittedLearner& f) { return f.history().best_val_loss; })
      .def_property_readonly("initial_val_loss",
                             [](const learners::FittedLearner& f) { return f.history().initial_val_loss; })
      .def("predict_cate", &learners::FittedLearner::predict_cate, py::arg("x"));

  m.def(
      "train",
      [](const std::string& learner, const data::Matrix& x, const std::vector<int>& t, const std::vector<double>& y,
         std::uint64_t seed, const std::string& config_json, const std::string& outcome_type) {
        const auto cfg = config::parse_config(config_json);
        const auto d = make_dataset(x, t, y, outcome_type);
        py::gil_scoped_release release;
        return learners::train(learners::LearnerKind::parse(learner), d, cfg.experiment.train, seed);
      },
      py::arg("learner"), py::arg("x"), py::arg("t"), py::arg("y"), py::arg("seed"), py::arg("config_json"),
      py::arg("outcome_type") = "continuous");

  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        const auto cfg = config::parse_config(config_json);
        eval::ResultsTable table;
        {
          py::gil_scoped_release release;
          table = eval::run_sweep(cfg.experiment);
        }
        py::list out;
        for (const auto& r : table.records) out.append(record_dict(r));
        return out;
      },
      py::arg("config_json"));

  m.def(
      "gradcheck",
      [](const std::string& config_json) {
        const auto cfg = config::parse_config(config_json);
        const auto report = gradcheck::run_all(cfg.gradcheck);
        py::list suites;
        for (const auto& s : report.suites) {
          py::dict d;
          d["name"] = s.name;
          d["cases"] = s.cases;
          d["worst_error"] = s.worst_error;
          d["tolerance"] = s.tolerance;
          d["passed"] = s.passed();
          suites.append(d);
        }
        return suites;
      },
      py::arg("config_json"));
}
