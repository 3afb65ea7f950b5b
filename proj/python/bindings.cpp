#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "exitsched/calibrator.hpp"
#include "exitsched/confidence.hpp"
#include "exitsched/error.hpp"
#include "exitsched/exitlog.hpp"
#include "exitsched/simulator.hpp"
#include "exitsched/synthgen.hpp"
#include "exitsched/trainer.hpp"

namespace py = pybind11;
using namespace exitsched;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint32_t, py::array::c_style | py::array::forcecast>;

ExitLog log_from_arrays(FloatArray scores, LabelArray labels, std::vector<double> costs, std::string split_name) {
  if (scores.ndim() != 3) throw Error(ErrorKind::kData, "scores must have shape (N, K, C)");
  ExitLog log;
  log.n_samples = static_cast<std::size_t>(scores.shape(0));
  log.n_exits = static_cast<std::size_t>(scores.shape(1));
  log.n_classes = static_cast<std::size_t>(scores.shape(2));
  log.scores.assign(scores.data(), scores.data() + scores.size());
  log.labels.assign(labels.data(), labels.data() + labels.size());
  log.costs = std::move(costs);
  log.split_name = std::move(split_name);
  log.validate();
  return log;
}

py::array_t<double> matrix(std::vector<double> values, std::size_t rows, std::size_t cols) {
  py::array_t<double> out({rows, cols});
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_exitsched, m) {
  m.doc() = "Budgeted early-exit policies for multi-exit classifiers";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  py::class_<ExitLog>(m, "ExitLog")
      .def(py::init(&log_from_arrays), py::arg("scores"), py::arg("labels"), py::arg("costs"),
           py::arg("split_name") = "python")
      .def_readonly("n_samples", &ExitLog::n_samples)
      .def_readonly("n_exits", &ExitLog::n_exits)
      .def_readonly("n_classes", &ExitLog::n_classes)
      .def_readonly("costs", &ExitLog::costs)
      .def_readonly("split_name", &ExitLog::split_name)
      .def_property_readonly("scores",
                             [](const ExitLog& l) {
                               py::array_t<float> a({l.n_samples, l.n_exits, l.n_classes});
                               std::copy(l.scores.begin(), l.scores.end(), a.mutable_data());
                               return a;
                             })
      .def_property_readonly("labels",
                             [](const ExitLog& l) {
                               py::array_t<std::uint32_t> a(static_cast<py::ssize_t>(l.n_samples));
                               std::copy(l.labels.begin(), l.labels.end(), a.mutable_data());
                               return a;
                             })
      .def("digest", &log_digest)
      .def("__eq__", [](const ExitLog& a, const ExitLog& b) { return a == b; });

  m.def("load_log", &load_log, py::arg("path"));
  m.def("save_log", &save_log, py::arg("log"), py::arg("path"), py::arg("config_digest") = "");
  m.def("save_log_jsonl", &save_log_jsonl, py::arg("log"), py::arg("path"), py::arg("config_digest") = "");
  m.def("split_log", &split_log, py::arg("log"), py::arg("fraction"), py::arg("seed"));

  m.def(
      "generate",
      [](std::size_t n_samples, std::size_t n_exits, std::size_t n_classes, std::vector<double> accuracies,
         double difficulty_mix, double concentration, std::vector<double> costs, std::uint64_t seed) {
        SynthSpec s;
        s.n_samples = n_samples;
        s.n_exits = n_exits;
        s.n_classes = n_classes;
        s.per_exit_accuracy = std::move(accuracies);
        s.difficulty_mix = difficulty_mix;
        s.concentration = concentration;
        s.costs = std::move(costs);
        s.seed = seed;
        return generate(s);
      },
      py::arg("n_samples") = 2000, py::arg("n_exits") = 3, py::arg("n_classes") = 10,
      py::arg("accuracies") = std::vector<double>{}, py::arg("difficulty_mix") = 0.3, py::arg("concentration") = 8.0,
      py::arg("costs") = std::vector<double>{}, py::arg("seed") = 0);
  m.def(
      "generate_benchmark", [](std::size_t n, std::uint64_t seed) { return generate(SynthSpec::benchmark(n, seed)); },
      py::arg("n_samples") = 20000, py::arg("seed") = 0);

  m.def(
      "confidence",
      [](DoubleArray history) {
        if (history.ndim() != 2) throw Error(ErrorKind::kData, "history must have shape (k, C)");
        const auto c = confidence_at_exit<double>(std::span<const double>(history.data(), history.size()),
                                                  static_cast<std::size_t>(history.shape(1)));
        return py::make_tuple(c.max, c.entropy, c.vote);
      },
      py::arg("history"), "(a_max, a_entropy, a_vote) at the last row of a (k, C) probability history.");

  m.def(
      "build_targets",
      [](const ExitLog& log) {
        const auto t = build_targets(log);
        std::vector<double> q(t.q.begin(), t.q.end());
        return py::make_tuple(matrix(q, t.n_samples, t.n_exits), matrix(t.r, t.n_samples, t.n_exits));
      },
      py::arg("log"), "(q, r) target matrices of shape (N, K).");

  py::class_<PolicyParams>(m, "PolicyParams")
      .def_property_readonly("n_exits", &PolicyParams::n_exits)
      .def_property_readonly("n_classes", &PolicyParams::n_classes)
      .def_property_readonly("hidden_dims", &PolicyParams::hidden_dims)
      .def_property_readonly("weights",
                             [](const PolicyParams& p) {
                               const auto w = p.weights();
                               return py::array_t<double>(static_cast<py::ssize_t>(w.size()), w.data());
                             })
      .def(
          "forward",
          [](const PolicyParams& p, const ExitLog& log, std::size_t n) {
            const auto out = forward(p, log.sample(n));
            return py::make_tuple(out.q_hat, out.r_hat);
          },
          py::arg("log"), py::arg("index"));
  m.def("initialize", &PolicyParams::initialize, py::arg("n_exits"), py::arg("n_classes"),
        py::arg("hidden_ratio") = 0.5, py::arg("seed") = 0);
  m.def("save_checkpoint", &save_checkpoint, py::arg("params"), py::arg("stem"), py::arg("config_digest") = "");
  m.def("load_checkpoint", &load_checkpoint, py::arg("stem"));

  m.def(
      "train",
      [](const ExitLog& log, double budget, double alpha, double beta, double learning_rate, std::size_t max_epochs,
         std::size_t patience, std::size_t batch_size, double hidden_ratio, std::uint64_t seed) {
        TrainConfig cfg;
        cfg.learning_rate = learning_rate;
        cfg.max_epochs = max_epochs;
        cfg.patience_epochs = patience;
        cfg.batch_size = batch_size;
        cfg.hidden_ratio = hidden_ratio;
        cfg.seed = seed;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(log, {budget, alpha, beta}, cfg);
        }
        py::list history;
        for (const auto& e : r.history) {
          history.append(py::dict(py::arg("epoch") = e.epoch, py::arg("L_g") = e.train.utility,
                                  py::arg("L_budget") = e.train.budget, py::arg("L_CE") = e.train.assignment,
                                  py::arg("total") = e.train.objective, py::arg("holdout_total") = e.holdout_total));
        }
        return py::make_tuple(r.params.quantized(), history);
      },
      py::arg("log"), py::arg("budget"), py::arg("alpha") = 0.1, py::arg("beta") = 1e-3,
      py::arg("learning_rate") = 3e-5, py::arg("max_epochs") = 1000, py::arg("patience") = 50,
      py::arg("batch_size") = 128, py::arg("hidden_ratio") = 0.5, py::arg("seed") = 0,
      "Returns (params, history).");

  py::class_<Policy>(m, "Policy")
      .def_property_readonly("kind", [](const Policy& p) { return std::string(to_string(p.kind)); })
      .def_readonly("thresholds", &Policy::thresholds)
      .def_readonly("quota", &Policy::quota)
      .def_readonly("budget", &Policy::budget);

  m.def(
      "calibrate",
      [](const std::string& kind, const ExitLog& log, double budget, const PolicyParams* params) {
        const PolicyKind k = parse_policy_kind(kind);
        if (k == PolicyKind::kEENet) {
          if (params == nullptr) throw Error(ErrorKind::kUsage, "eenet calibration needs params");
          return calibrate_eenet(*params, log, {budget});
        }
        return calibrate_baseline(k, log, {budget});
      },
      py::arg("kind"), py::arg("log"), py::arg("budget"), py::arg("params") = nullptr);
  m.def("save_policy", &save_policy, py::arg("policy"), py::arg("path"), py::arg("write_checkpoint") = true);
  m.def("load_policy", &load_policy, py::arg("path"));

  m.def(
      "evaluate",
      [](const Policy& policy, const ExitLog& log) {
        const auto r = evaluate(policy, log);
        py::array_t<std::int64_t> exits(static_cast<py::ssize_t>(r.per_sample_exit.size()));
        std::copy(r.per_sample_exit.begin(), r.per_sample_exit.end(), exits.mutable_data());
        return py::dict(py::arg("policy") = r.policy, py::arg("budget") = r.budget, py::arg("accuracy") = r.accuracy,
                        py::arg("avg_cost") = r.avg_cost, py::arg("overshoot") = r.overshoot,
                        py::arg("per_exit_counts") = r.per_exit_counts,
                        py::arg("per_exit_correct") = r.per_exit_correct, py::arg("per_sample_exit") = exits);
      },
      py::arg("policy"), py::arg("log"));

  m.def(
      "score_matrix",
      [](const std::string& kind, const ExitLog& log, const PolicyParams* params) {
        return matrix(score_matrix(parse_policy_kind(kind), params, log), log.n_samples, log.n_exits);
      },
      py::arg("kind"), py::arg("log"), py::arg("params") = nullptr);

  m.def(
      "brute_force_best_thresholds",
      [](const ExitLog& log, DoubleArray scores, double budget, std::size_t grid_size) {
        const auto r = brute_force_best_thresholds(log, std::span<const double>(scores.data(), scores.size()), budget,
                                                   grid_size);
        return py::dict(py::arg("thresholds") = r.thresholds, py::arg("accuracy") = r.accuracy,
                        py::arg("avg_cost") = r.avg_cost, py::arg("correct") = r.correct);
      },
      py::arg("log"), py::arg("scores"), py::arg("budget"), py::arg("grid_size") = 64);
}
