// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cvarprobe/cli.hpp"
#include "cvarprobe/error.hpp"
#include "cvarprobe/feature_bank.hpp"
#include "cvarprobe/loss.hpp"
#include "cvarprobe/metrics.hpp"
#include "cvarprobe/mlp.hpp"
#include "cvarprobe/optim.hpp"
#include "cvarprobe/trainer.hpp"

namespace py = pybind11;
using namespace cvarprobe;

namespace {

template <typename T>
using Array = py::array_t<T, py::array::c_style | py::array::forcecast>;

template <typename T>
py::array_t<T> to_numpy(std::span<const T> values, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

py::array_t<double> matrix_to_numpy(const Matrix& m) {
  return to_numpy<double>(m.values(), {static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
}

Matrix numpy_to_matrix(const Array<double>& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kShapeMismatch, "expected a 2-D array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.values().begin());
  return m;
}

template <typename T>
std::vector<T> to_vector(const Array<T>& a) {
  return std::vector<T>(a.data(), a.data() + a.size());
}

TaskKind parse_task(const std::string& name, std::uint16_t width) {
  if (name == "multiclass" || name == "expr") return TaskKind::multiclass(width);
  if (name == "multilabel" || name == "au") return TaskKind::multilabel(width);
  throw Error(ErrorCode::kInvalidArgument, "task must be 'multiclass' or 'multilabel', got '" + name + "'");
}

const char* task_name(const TaskKind& t) { return t.is_multiclass() ? "multiclass" : "multilabel"; }

FeatureBank make_bank(const Array<float>& features, const py::array& labels, const std::string& task,
                      std::optional<std::uint16_t> width) {
  if (features.ndim() != 2) throw Error(ErrorCode::kShapeMismatch, "features must be n x d");
  const auto d = static_cast<std::size_t>(features.shape(1));
  if (task == "multiclass" || task == "expr") {
    const auto classes = to_vector(Array<std::uint16_t>::ensure(labels));
    std::uint16_t k = 2;
    for (const auto c : classes) k = std::max<std::uint16_t>(k, static_cast<std::uint16_t>(c + 1));
    return FeatureBank(TaskKind::multiclass(width.value_or(k)), d, to_vector(features), classes);
  }
  const auto units = Array<std::uint8_t>::ensure(labels);
  if (units.ndim() != 2) throw Error(ErrorCode::kShapeMismatch, "multilabel labels must be n x m");
  const auto m = static_cast<std::uint16_t>(units.shape(1));
  return FeatureBank(parse_task(task, width.value_or(m)), d, to_vector(features), to_vector(units));
}

py::dict report_to_dict(const EvalReport& r) {
  py::list classes;
  for (const auto& c : r.classes) {
    py::dict row;
    row["name"] = c.name;
    row["precision"] = c.precision;
    row["recall"] = c.recall;
    row["f1"] = c.f1;
    row["support"] = c.support;
    classes.append(row);
  }
  py::dict out;
  out["classes"] = classes;
  out["macro_precision"] = r.macro_precision;
  out["macro_recall"] = r.macro_recall;
  out["macro_f1"] = r.macro_f1;
  out["samples"] = r.samples;
  out["confusion"] = r.confusion;
  return out;
}

py::array predictions_to_numpy(const Predictions& p, const TaskKind& task, std::size_t n) {
  if (task.is_multiclass()) return to_numpy<std::uint16_t>(p.classes, {static_cast<py::ssize_t>(n)});
  return to_numpy<std::uint8_t>(p.units, {static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(task.width)});
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "CVaR-weighted, sign-perturbed training of MLP heads over embedding feature banks.";

  // Held for the life of the process; the translator may run during
  // interpreter shutdown.
  static PyObject* error_type = [&] {
    py::exception<Error> type(m, "CvarprobeError", PyExc_RuntimeError);
    return type.inc_ref().ptr();
  }();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object instance = py::reinterpret_borrow<py::object>(error_type)(e.what());
      instance.attr("code") = std::string(error_name(e.code()));
      PyErr_SetObject(error_type, instance.ptr());
    }
  });

  py::class_<FeatureBank>(m, "FeatureBank")
      .def(py::init(&make_bank), py::arg("features"), py::arg("labels"), py::arg("task") = "multiclass",
           py::arg("width") = py::none(),
           "Bank from float32 features (n x d) and class indices (n,) or unit flags (n x m).")
      .def_property_readonly("task", [](const FeatureBank& b) { return task_name(b.task()); })
      .def_property_readonly("width", [](const FeatureBank& b) { return b.task().width; })
      .def_property_readonly("size", &FeatureBank::size)
      .def_property_readonly("dim", &FeatureBank::dim)
      .def_property_readonly("features",
                             [](const FeatureBank& b) {
                               return to_numpy<float>(b.features(), {static_cast<py::ssize_t>(b.size()),
                                                                     static_cast<py::ssize_t>(b.dim())});
                             })
      .def_property_readonly("labels",
                             [](const FeatureBank& b) -> py::array {
                               if (b.task().is_multiclass()) {
                                 return to_numpy<std::uint16_t>(b.class_labels(),
                                                                {static_cast<py::ssize_t>(b.size())});
                               }
                               return to_numpy<std::uint8_t>(b.unit_labels(), {static_cast<py::ssize_t>(b.size()),
                                                                               b.task().width});
                             })
      .def("__len__", &FeatureBank::size)
      .def("__eq__", [](const FeatureBank& a, const FeatureBank& b) { return a == b; });

  m.def(
      "load_bank",
      [](const std::filesystem::path& path, std::optional<std::string> task, std::optional<std::uint16_t> width) {
        std::optional<TaskKind> hint;
        if (task) hint = parse_task(*task, width.value_or(*task == "multilabel" || *task == "au" ? 12 : 8));
        return load_bank(path, hint);
      },
      py::arg("path"), py::arg("task") = py::none(), py::arg("width") = py::none(),
      "Loads an FBNK file, or CSV when the magic is absent (task/width describe the CSV).");
  m.def("save_bank", &save_bank, py::arg("bank"), py::arg("path"));
  m.def("save_bank_csv", &save_bank_csv, py::arg("bank"), py::arg("path"));
  m.def(
      "gen_synthetic",
      [](const std::string& task, std::size_t dim, std::vector<std::size_t> counts, std::vector<double> rates,
         std::size_t samples, double separation, double noise, std::uint64_t seed) {
        SyntheticSpec spec;
        const bool multiclass = task == "multiclass" || task == "expr";
        spec.task = parse_task(task, static_cast<std::uint16_t>(multiclass ? counts.size() : rates.size()));
        spec.dim = dim;
        spec.class_counts = std::move(counts);
        spec.unit_rates = std::move(rates);
        spec.samples = samples;
        spec.separation = separation;
        spec.noise = noise;
        spec.seed = seed;
        return gen_synthetic(spec);
      },
      py::arg("task") = "multiclass", py::arg("dim") = 16, py::arg("counts") = std::vector<std::size_t>{},
      py::arg("rates") = std::vector<double>{}, py::arg("samples") = 0, py::arg("separation") = 1.0,
      py::arg("noise") = 1.0, py::arg("seed") = 0);

  py::class_<MlpParams>(m, "Model")
      .def_property_readonly("task", [](const MlpParams& p) { return task_name(p.config.task); })
      .def_property_readonly("input_dim", [](const MlpParams& p) { return p.config.input_dim; })
      .def_property_readonly("hidden", [](const MlpParams& p) {
        return std::pair{p.config.hidden1, p.config.hidden2};
      })
      .def_property_readonly("output_dim", [](const MlpParams& p) { return p.config.output_dim(); })
      .def_property_readonly("dropout", [](const MlpParams& p) { return p.config.dropout; })
      .def_property_readonly("parameter_count", [](const MlpParams& p) { return p.trainable.parameter_count(); })
      .def(
          "logits",
          [](const MlpParams& p, const Array<double>& x) {
            return matrix_to_numpy(forward(p, numpy_to_matrix(x), Mode::kEval).logits);
          },
          py::arg("features"), "EVAL-mode logits.")
      .def(
          "predict",
          [](const MlpParams& p, const Array<double>& x) {
            return predictions_to_numpy(predict(p, numpy_to_matrix(x), p.config.task), p.config.task,
                                        static_cast<std::size_t>(x.shape(0)));
          },
          py::arg("features"))
      .def(
          "evaluate",
          [](const MlpParams& p, const FeatureBank& bank, std::size_t batch_size) {
            return report_to_dict(evaluate(p, bank, batch_size));
          },
          py::arg("bank"), py::arg("batch_size") = 256)
      .def("save", [](const MlpParams& p, const std::filesystem::path& path) { save_checkpoint(p, path); },
           py::arg("path"))
      .def("__eq__", [](const MlpParams& a, const MlpParams& b) { return a == b; });
  m.def("load_model", &load_checkpoint, py::arg("path"));
  m.def(
      "init_model",
      [](const std::string& task, std::uint16_t width, std::uint32_t input_dim, std::pair<std::uint32_t, std::uint32_t> hidden,
         double dropout, std::uint64_t seed) {
        MlpConfig c{parse_task(task, width)};
        c.input_dim = input_dim;
        c.hidden1 = hidden.first;
        c.hidden2 = hidden.second;
        c.dropout = dropout;
        return init_params(c, seed);
      },
      py::arg("task"), py::arg("width"), py::arg("input_dim"), py::arg("hidden") = std::pair{512u, 256u},
      py::arg("dropout") = 0.3, py::arg("seed") = 0);

  m.def(
      "train",
      [](const FeatureBank& bank, const FeatureBank* validation, double alpha, double gamma, double lr,
         double min_lr, std::size_t batch_size, std::size_t epochs, std::uint64_t seed,
         std::pair<std::uint32_t, std::uint32_t> hidden, double dropout, double val_fraction) {
        TrainConfig c;
        c.mlp = MlpConfig{bank.task()};
        c.mlp.input_dim = static_cast<std::uint32_t>(bank.dim());
        c.mlp.hidden1 = hidden.first;
        c.mlp.hidden2 = hidden.second;
        c.mlp.dropout = dropout;
        c.cvar.alpha = alpha;
        c.sam.gamma = gamma;
        c.lr = lr;
        c.min_lr = min_lr;
        c.batch_size = batch_size;
        c.epochs = epochs;
        c.seeds = TrainSeeds::from_master(seed);
        c.val_fraction = val_fraction;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(bank, c, validation);
        }
        py::dict log;
        const auto column = [&](auto field) {
          std::vector<double> v;
          for (const auto& s : r.log.steps) v.push_back(static_cast<double>(field(s)));
          return py::array_t<double>(static_cast<py::ssize_t>(v.size()), v.data());
        };
        log["epoch"] = column([](const StepRecord& s) { return s.epoch; });
        log["step"] = column([](const StepRecord& s) { return s.step; });
        log["lambda"] = column([](const StepRecord& s) { return s.lambda; });
        log["cvar_obj"] = column([](const StepRecord& s) { return s.cvar_objective; });
        log["lr"] = column([](const StepRecord& s) { return s.lr; });
        log["grad_l1"] = column([](const StepRecord& s) { return s.grad_l1; });
        std::vector<double> val;
        for (const auto& e : r.log.epochs) val.push_back(e.val_macro_f1);
        log["val_macro_f1"] = py::array_t<double>(static_cast<py::ssize_t>(val.size()), val.data());
        py::dict out;
        out["best"] = std::move(r.best);
        out["last"] = std::move(r.last);
        out["best_epoch"] = r.best_epoch;
        out["best_val_macro_f1"] = r.best_val_macro_f1;
        out["log"] = log;
        return out;
      },
      py::arg("bank"), py::arg("validation") = nullptr, py::kw_only(), py::arg("alpha") = 0.3,
      py::arg("gamma") = 0.05, py::arg("lr") = 1e-3, py::arg("min_lr") = 0.0, py::arg("batch_size") = 32,
      py::arg("epochs") = 32, py::arg("seed") = 0, py::arg("hidden") = std::pair{512u, 256u},
      py::arg("dropout") = 0.3, py::arg("val_fraction") = 0.0,
      "Trains a head; returns a dict with best/last models, best_epoch, best_val_macro_f1 and the step log.");

  m.def(
      "cross_entropy",
      [](const Array<double>& logits, const Array<std::uint16_t>& labels) {
        const auto r = cross_entropy(numpy_to_matrix(logits), to_vector(labels));
        return std::pair{to_numpy<double>(r.values, {static_cast<py::ssize_t>(r.values.size())}),
                         matrix_to_numpy(r.dlogits)};
      },
      py::arg("logits"), py::arg("labels"), "Per-sample losses and per-sample logit gradients.");
  m.def(
      "binary_cross_entropy",
      [](const Array<double>& logits, const Array<std::uint8_t>& labels) {
        const auto r = binary_cross_entropy(numpy_to_matrix(logits), to_vector(labels));
        return std::pair{to_numpy<double>(r.values, {static_cast<py::ssize_t>(r.values.size())}),
                         matrix_to_numpy(r.dlogits)};
      },
      py::arg("logits"), py::arg("labels"));
  m.def("tail_count", &tail_count, py::arg("alpha"), py::arg("b"));
  m.def(
      "cvar_objective",
      [](const Array<double>& losses, double lambda, double alpha) {
        return cvar_objective(to_vector(losses), lambda, alpha);
      },
      py::arg("losses"), py::arg("lam"), py::arg("alpha"));
  m.def(
      "cvar_lambda_search",
      [](const Array<double>& losses, double alpha, double tolerance, std::size_t max_iterations) {
        const auto s = cvar_lambda_search(to_vector(losses), CvarConfig{alpha, tolerance, max_iterations});
        py::dict out;
        out["lambda"] = s.lambda;
        out["objective"] = s.objective;
        out["tail"] = s.tail;
        out["active"] = s.active;
        out["weights"] = to_numpy<double>(s.weights, {static_cast<py::ssize_t>(s.weights.size())});
        out["iterations"] = s.iterations;
        out["hit_iteration_cap"] = s.hit_iteration_cap;
        return out;
      },
      py::arg("losses"), py::arg("alpha") = 0.3, py::arg("tolerance") = 1e-9, py::arg("max_iterations") = 200);
  m.def(
      "cosine_lr",
      [](double base, double minimum, std::uint64_t total_steps, std::uint64_t t) {
        return cosine_lr(LrSchedule{base, minimum, total_steps}, t);
      },
      py::arg("base"), py::arg("minimum"), py::arg("total_steps"), py::arg("t"));
  m.def(
      "macro_f1_multiclass",
      [](const Array<std::uint16_t>& preds, const Array<std::uint16_t>& truth, std::size_t k, double zero_division) {
        return report_to_dict(macro_f1_multiclass(to_vector(preds), to_vector(truth), k, ZeroDivision{zero_division}));
      },
      py::arg("preds"), py::arg("truth"), py::arg("k"), py::arg("zero_division") = 0.0);
  m.def(
      "macro_f1_multilabel",
      [](const Array<std::uint8_t>& preds, const Array<std::uint8_t>& truth, double zero_division) {
        if (preds.ndim() != 2 || truth.ndim() != 2 || preds.shape(1) != truth.shape(1)) {
          throw Error(ErrorCode::kShapeMismatch, "preds and truth must be n x m arrays of the same width");
        }
        return report_to_dict(macro_f1_multilabel(to_vector(preds), to_vector(truth),
                                                  static_cast<std::size_t>(preds.shape(1)),
                                                  ZeroDivision{zero_division}));
      },
      py::arg("preds"), py::arg("truth"), py::arg("zero_division") = 0.0);
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
