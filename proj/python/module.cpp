// Copyright 2026 The fashionmt Authors
// SPDX-License-Identifier: Apache-2.0

// Python bindings. Structured values cross the boundary as JSON-shaped dicts.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fashionmt/config.hpp"
#include "fashionmt/data.hpp"
#include "fashionmt/error.hpp"
#include "fashionmt/metrics.hpp"
#include "fashionmt/training.hpp"

namespace py = pybind11;
using namespace fashionmt;
using nlohmann::json;

namespace {

py::object to_py(const json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

json from_py(const py::handle& obj) {
  const std::string s = py::str(py::module_::import("json").attr("dumps")(obj));
  return json::parse(s);
}

std::map<Task, double> task_map(const std::map<std::string, double>& m) {
  std::map<Task, double> out;
  for (const auto& [k, v] : m) out[parse_task(k)] = v;
  return out;
}

py::dict account_dict(const metrics::ParamAccount& a) {
  py::dict components;
  for (const auto& [n, c] : a.components) components[py::str(n)] = c;
  py::dict d;
  d["total"] = a.total;
  d["components"] = components;
  return d;
}

// Trains one run from a config dict: a teacher when `task` is given,
// otherwise a multi-task model without distillation.
py::object train(const py::dict& config, const std::optional<std::string>& task) {
  const RunConfig rc = RunConfig::from_json(from_py(config));
  RunReport report;
  {
    py::gil_scoped_release release;
    const data::Corpus corpus = data::build_corpus(rc.data.seed, rc.data.products, rc.data.sizes);
    if (task) {
      report = train_teacher(parse_task(*task), rc.model, rc.train, corpus).report;
    } else {
      if (rc.train.distill) fail(ErrorKind::kMissingTeacher, "train: distillation needs teachers");
      report = train_mtl(rc.model, rc.train, corpus, nullptr).report;
    }
  }
  return to_py(report.to_json());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-task vision-language training on a synthetic fashion corpus";

  static py::handle exc = PyErr_NewException("fashionmt._core.Error", PyExc_RuntimeError, nullptr);
  m.attr("Error") = exc;
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(exc)(e.what());
      inst.attr("kind") = error_kind_name(e.kind());
      inst.attr("exit_code") = error_exit_code(e.kind());
      PyErr_SetObject(exc.ptr(), inst.ptr());
    }
  });

  m.def("default_config", [] { return to_py(RunConfig{}.to_json()); });
  m.def(
      "validate_config", [](const py::dict& c) { return to_py(RunConfig::from_json(from_py(c)).to_json()); },
      py::arg("config"), "Fills defaults; raises Error(kind='config_schema') on schema problems.");

  m.def("tokenize", [](const std::string& s) { return data::tokenize(s); });
  m.def("detokenize", [](const std::vector<std::size_t>& ids) { return data::detokenize(ids); });
  m.def(
      "corpus_sizes",
      [](std::uint64_t seed, std::size_t products) {
        const data::Corpus c = data::build_corpus(seed, products, {});
        py::dict d;
        d["xmr"] = c.xmr.size();
        d["tgir"] = c.tgir.size();
        d["scr"] = c.scr.size();
        d["fic"] = c.fic.size();
        return d;
      },
      py::arg("seed"), py::arg("products") = 864);

  m.def("bleu4", &metrics::bleu4, py::arg("hyp"), py::arg("refs"));
  m.def("rouge_l", &metrics::rouge_l, py::arg("hyp"), py::arg("ref"));
  m.def("cider", &metrics::cider, py::arg("hyps"), py::arg("refs"));
  m.def("relative_change", &metrics::relative_change, py::arg("mu"), py::arg("reference"));

  m.def(
      "param_account",
      [](const py::dict& model, const std::string& mode) {
        if (mode != "mtl" && mode != "stl")
          fail(ErrorKind::kInvalidArgument, "param_account: mode must be 'mtl' or 'stl'");
        ModelConfig c;
        try {
          c = ModelConfig::from_json(from_py(model));
        } catch (const json::exception& e) {
          fail(ErrorKind::kConfigSchema, std::string("param_account: ") + e.what());
        }
        return account_dict(metrics::param_account(
            c, mode == "mtl" ? metrics::AccountMode::kMtl : metrics::AccountMode::kStlSet));
      },
      py::arg("model"), py::arg("mode") = "mtl",
      "Takes a full model config as returned by clip_scale_config.");
  m.def("clip_scale_config", [] { return to_py(ModelConfig::clip_scale().to_json()); });

  m.def(
      "imtlg_alpha",
      [](const std::vector<std::vector<double>>& grads) {
        const auto w = imtlg_alpha(grads);
        return py::make_tuple(w.alpha, w.fallback);
      },
      py::arg("grads"));
  m.def(
      "imtlg_projection_gap",
      [](const std::vector<std::vector<double>>& grads, const std::vector<double>& alpha) {
        return imtlg_projection_gap(grads, alpha);
      },
      py::arg("grads"), py::arg("alpha"));
  m.def(
      "ias_scale",
      [](const std::map<std::string, double>& val, const std::map<std::string, double>& teacher) {
        std::map<std::string, double> out;
        for (const auto& [t, v] : ias_scale(task_map(val), task_map(teacher))) out[task_name(t)] = v;
        return out;
      },
      py::arg("val_mu"), py::arg("teacher_mu"));

  m.def("train", &train, py::arg("config"), py::arg("task") = std::nullopt);
}
