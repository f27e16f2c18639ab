#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fedunlearn/config.hpp"
#include "fedunlearn/data.hpp"
#include "fedunlearn/errors.hpp"
#include "fedunlearn/experiment.hpp"
#include "fedunlearn/metrics.hpp"
#include "fedunlearn/param_space.hpp"
#include "fedunlearn/plot.hpp"

namespace py = pybind11;
using namespace fedunlearn;

namespace {

py::dict comm_dict(const CommCounter& c) {
  py::dict d;
  d["uploads"] = c.uploads;
  d["downloads"] = c.downloads;
  d["client_train_steps"] = c.client_train_steps;
  d["calibration_rounds"] = c.calibration_rounds;
  return d;
}

ParamVector to_pv(const std::vector<double>& v) { return ParamVector(v); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Federated learning and unlearning with task vectors";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ArgumentError>(m, "ArgumentError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def_static("from_json", &config_from_json_text, py::arg("text"))
      .def_static("load", &load_config, py::arg("path"))
      .def("to_json", &config_to_json_text)
      .def("hash", &config_hash)
      .def("validate", &ExperimentConfig::validate)
      .def_property(
          "strategy", [](const ExperimentConfig& c) { return to_string(c.strategy); },
          [](ExperimentConfig& c, const std::string& s) { c.strategy = strategy_from_string(s); })
      .def_property(
          "regime", [](const ExperimentConfig& c) { return to_string(c.regime); },
          [](ExperimentConfig& c, const std::string& s) { c.regime = regime_from_string(s); })
      .def_readwrite("beta", &ExperimentConfig::beta)
      .def_readwrite("clients", &ExperimentConfig::clients)
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_readwrite("lambda_tgt", &ExperimentConfig::lambda_tgt)
      .def_readwrite("lr_main", &ExperimentConfig::lr_main)
      .def_readwrite("lr_standalone", &ExperimentConfig::lr_standalone)
      .def_readwrite("target_id", &ExperimentConfig::target_id)
      .def_readwrite("epochs_per_round", &ExperimentConfig::epochs_per_round)
      .def_property(
          "phase_rounds",
          [](const ExperimentConfig& c) { return py::make_tuple(c.phase_rounds.fl, c.phase_rounds.fu, c.phase_rounds.pu); },
          [](ExperimentConfig& c, std::tuple<std::size_t, std::size_t, std::size_t> t) {
            c.phase_rounds = {std::get<0>(t), std::get<1>(t), std::get<2>(t)};
          });

  py::class_<RoundReport>(m, "RoundReport")
      .def_readonly("round", &RoundReport::round_index)
      .def_property_readonly("phase", [](const RoundReport& r) { return to_string(r.phase); })
      .def_readonly("global_acc", &RoundReport::global_test_accuracy)
      .def_readonly("target_acc", &RoundReport::target_test_accuracy)
      .def_readonly("retain_acc", &RoundReport::retain_test_accuracy)
      .def_readonly("per_client", &RoundReport::per_client_accuracy);

  py::class_<MetricsLog>(m, "MetricsLog")
      .def_readonly("rounds", &MetricsLog::rounds)
      .def_property_readonly("run_id", [](const MetricsLog& l) { return l.meta.run_id; })
      .def_property_readonly("seed", [](const MetricsLog& l) { return l.meta.seed; })
      .def_property_readonly("strategy", [](const MetricsLog& l) { return to_string(l.meta.strategy); })
      .def_property_readonly("regime", [](const MetricsLog& l) { return to_string(l.meta.regime); })
      .def_property_readonly("unlearn_comm", [](const MetricsLog& l) { return comm_dict(l.meta.unlearn_comm); })
      .def_property_readonly("total_comm", [](const MetricsLog& l) { return comm_dict(l.meta.total_comm); })
      .def_property_readonly("warnings", [](const MetricsLog& l) { return l.meta.warnings; })
      .def("first_unlearning_round",
           [](const MetricsLog& l) -> std::optional<RoundReport> {
             const RoundReport* r = l.first_unlearning_round();
             return r ? std::optional<RoundReport>(*r) : std::nullopt;
           });

  py::class_<GridResult>(m, "GridResult")
      .def_readonly("best", &GridResult::best)
      .def_readonly("best_index", &GridResult::best_index)
      .def_readonly("logs", &GridResult::logs)
      .def_readonly("criterion", &GridResult::criterion);

  auto opts = [](const std::string& dir) { return RunOptions{dir}; };
  m.def(
      "run_experiment",
      [opts](const ExperimentConfig& c, std::uint64_t seed, const std::string& history_dir) {
        py::gil_scoped_release release;
        return run_experiment(c, seed, opts(history_dir));
      },
      py::arg("config"), py::arg("seed"), py::arg("history_dir") = "");
  m.def(
      "run_all_seeds",
      [opts](const ExperimentConfig& c, const std::string& history_dir) {
        py::gil_scoped_release release;
        return run_all_seeds(c, opts(history_dir));
      },
      py::arg("config"), py::arg("history_dir") = "");
  m.def(
      "grid_search",
      [opts](const ExperimentConfig& c, const std::string& history_dir) {
        py::gil_scoped_release release;
        return grid_search(c, opts(history_dir));
      },
      py::arg("config"), py::arg("history_dir") = "");

  m.def(
      "write_csv", [](const std::vector<MetricsLog>& logs, const std::string& path) { emit_csv(logs, path); },
      py::arg("logs"), py::arg("path"));
  m.def(
      "write_plots",
      [](const std::vector<MetricsLog>& logs, const std::string& dir, bool percent) {
        return emit_plots(logs, dir, {percent});
      },
      py::arg("logs"), py::arg("dir"), py::arg("percent") = false);
  m.def("read_csv", &parse_metrics_csv, py::arg("path"));

  // Task vectors stay opaque so the rounding residual survives the trip through Python.
  py::class_<TaskVector>(m, "TaskVector")
      .def(py::init([](const std::vector<double>& delta) { return make_task_vector(to_pv(delta)); }),
           py::arg("delta"))
      .def_property_readonly("delta", [](const TaskVector& t) { return t.delta.raw(); })
      .def("__len__", &TaskVector::size);
  m.def(
      "task_vector",
      [](const std::vector<double>& theta_t, const std::vector<double>& theta_0) {
        return task_vector(to_pv(theta_t), to_pv(theta_0));
      },
      py::arg("theta_t"), py::arg("theta_0"));
  m.def(
      "combine",
      [](const std::vector<double>& theta_0, const std::vector<std::pair<double, TaskVector>>& terms) {
        std::vector<WeightedTask> weighted;
        for (const auto& [lambda, tau] : terms) weighted.push_back({lambda, std::cref(tau)});
        return combine(to_pv(theta_0), weighted).raw();
      },
      py::arg("theta_0"), py::arg("terms"));
  m.def(
      "dirichlet_partition",
      [](const std::vector<int>& labels, std::size_t clients, double beta, std::uint64_t seed) {
        return dirichlet_partition(labels, clients, beta, seed).client_indices;
      },
      py::arg("labels"), py::arg("clients"), py::arg("beta"), py::arg("seed"));
}
