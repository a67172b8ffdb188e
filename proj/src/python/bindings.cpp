// Python bindings. JSON-shaped values cross the boundary as dicts and
// datasets as dicts of numpy arrays {"x": (n, d), "c": (n, k), "y": (n,)}.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

#include "cirm/error.hpp"
#include "cirm/harness.hpp"
#include "cirm/intervene.hpp"
#include "cirm/models.hpp"
#include "cirm/realign_train.hpp"
#include "cirm/realigner.hpp"
#include "cirm/service.hpp"
#include "cirm/world.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace cirm;

namespace {

py::object to_py(const json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

json from_py(const py::handle& obj) {
  if (obj.is_none()) return json();
  return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

py::dict dataset_to_py(const Dataset& data, std::size_t d, std::size_t k) {
  const auto n = static_cast<py::ssize_t>(data.size());
  py::array_t<double> x({n, static_cast<py::ssize_t>(d)});
  py::array_t<double> c({n, static_cast<py::ssize_t>(k)});
  py::array_t<std::int64_t> y(n);
  auto xm = x.mutable_unchecked<2>();
  auto cm = c.mutable_unchecked<2>();
  auto ym = y.mutable_unchecked<1>();
  for (py::ssize_t r = 0; r < n; ++r) {
    const SampleRecord& s = data[static_cast<std::size_t>(r)];
    for (std::size_t j = 0; j < d; ++j) xm(r, j) = s.x[j];
    for (std::size_t j = 0; j < k; ++j) cm(r, j) = s.c[j];
    ym(r) = static_cast<std::int64_t>(s.y);
  }
  py::dict out;
  out["x"] = x;
  out["c"] = c;
  out["y"] = y;
  return out;
}

Dataset dataset_from_py(const py::dict& data) {
  auto x = data["x"].cast<py::array_t<double, py::array::c_style | py::array::forcecast>>();
  auto c = data["c"].cast<py::array_t<double, py::array::c_style | py::array::forcecast>>();
  auto y = data["y"].cast<py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>>();
  if (x.ndim() != 2 || c.ndim() != 2 || y.ndim() != 1) {
    throw ShapeError("dataset needs x (n, d), c (n, k) and y (n,)");
  }
  const auto n = x.shape(0);
  if (c.shape(0) != n || y.shape(0) != n) throw ShapeError("dataset arrays disagree on n");
  auto xv = x.unchecked<2>();
  auto cv = c.unchecked<2>();
  auto yv = y.unchecked<1>();
  Dataset out(static_cast<std::size_t>(n));
  for (py::ssize_t r = 0; r < n; ++r) {
    SampleRecord& s = out[static_cast<std::size_t>(r)];
    for (py::ssize_t j = 0; j < x.shape(1); ++j) s.x.push_back(xv(r, j));
    for (py::ssize_t j = 0; j < c.shape(1); ++j) s.c.push_back(cv(r, j));
    if (yv(r) < 0) throw ValueError("labels must be >= 0");
    s.y = static_cast<std::size_t>(yv(r));
  }
  return out;
}

PolicyKind policy_arg(const py::object& p) {
  if (p.is_none()) return PolicyKind::ucp();
  if (py::isinstance<py::str>(p)) {
    const std::string s = p.cast<std::string>();
    if (s == "ucp") return PolicyKind::ucp(PolicySource::updated);
    if (s == "ucp_static") return PolicyKind::ucp(PolicySource::original);
    if (s == "random") return PolicyKind::random(0);
    throw ValueError("unknown policy '" + s + "'");
  }
  return policy_from_json(from_py(p));
}

SelectionUnits units_for(const ConceptModel& model, const GenerativeWorld* world) {
  if (world) return SelectionUnits::from_groups(model.num_concepts(), world->groups);
  return SelectionUnits::concepts(model.num_concepts());
}

json curves_to_json(const CurvePair& cp) {
  auto one = [](const Curve& c) {
    return json{{"metric", to_string(c.metric)}, {"t", c.t},           {"value", c.value},
                {"stderr", c.stderr_},           {"n_samples", c.n_samples}, {"fingerprint", c.fingerprint}};
  };
  return {{"concept_loss", one(cp.concept_loss)}, {"accuracy", one(cp.accuracy)}};
}

json table_to_json(const std::vector<TableRow>& table) {
  json out = json::array();
  for (const auto& r : table) {
    out.push_back({{"world", r.world},
                   {"label", r.label},
                   {"realigned", r.realigned},
                   {"n_seeds", r.n_seeds},
                   {"concept_loss_auc_mean", r.concept_loss_auc_mean},
                   {"concept_loss_auc_stderr", r.concept_loss_auc_stderr},
                   {"accuracy_auc_mean", r.accuracy_auc_mean},
                   {"accuracy_auc_stderr", r.accuracy_auc_stderr}});
  }
  return out;
}

json errors_to_json(const std::vector<CellError>& errors) {
  json out = json::array();
  for (const auto& e : errors) {
    out.push_back({{"world", e.world}, {"label", e.label}, {"seed", e.seed}, {"message", e.message}});
  }
  return out;
}

ExperimentConfig experiment_arg(const py::object& cfg) {
  if (cfg.is_none()) return default_experiment_config();
  json merged = to_json(default_experiment_config());
  merged.merge_patch(from_py(cfg));
  return experiment_config_from_json(merged);
}

// Python-side handles. Models are shared so sessions and trajectories can
// outlive the Experiment that trained them.
struct PyModel {
  std::shared_ptr<ConceptModel> ptr;
};

struct PyRealigner {
  std::shared_ptr<Realigner> ptr;
  std::uint64_t base_checksum = 0;
};

struct PyExperiment {
  std::unique_ptr<Workbench> wb;
};

const Realigner* realigner_ptr(const py::object& r) {
  if (r.is_none()) return nullptr;
  return r.cast<PyRealigner&>().ptr.get();
}

}  // namespace

PYBIND11_MODULE(_cirm, m) {
  m.doc() = "Concept models, test-time interventions and concept realignment";

  auto base = py::register_exception<Error>(m, "CirmError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ValueError>(m, "ValueError", PyExc_ValueError);
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<GenerativeWorld>(m, "World")
      .def_static(
          "preset", [](const std::string& name, std::uint64_t seed) {
            return build_world(preset_spec(name, seed));
          },
          py::arg("name"), py::arg("seed") = 0)
      .def_static("from_dict", [](const py::object& d) {
        return build_world(world_spec_from_json(from_py(d)));
      })
      .def_static("load", &load_world)
      .def_static("preset_names", &preset_names)
      .def("save", [](const GenerativeWorld& w, const std::filesystem::path& p) { save_world(p, w); })
      .def("to_dict", [](const GenerativeWorld& w) { return to_py(world_to_json(w)); })
      .def_readonly("num_concepts", &GenerativeWorld::num_concepts)
      .def_readonly("num_classes", &GenerativeWorld::num_classes)
      .def_readonly("input_dim", &GenerativeWorld::input_dim)
      .def_readonly("concept_names", &GenerativeWorld::concept_names)
      .def_readonly("class_names", &GenerativeWorld::class_names)
      .def(
          "sample",
          [](const GenerativeWorld& w, std::size_t n, std::uint64_t seed) {
            return dataset_to_py(sample(w, n, seed), w.input_dim, w.num_concepts);
          },
          py::arg("n"), py::arg("seed") = 0)
      .def(
          "exact_conditional",
          [](const GenerativeWorld& w, const std::map<std::size_t, int>& evidence,
             std::size_t target) { return exact_conditional(w, evidence, target); },
          py::arg("evidence"), py::arg("target"))
      .def("marginals", [](const GenerativeWorld& w) { return concept_marginals(w); })
      .def("class_posterior",
           [](const GenerativeWorld& w, const Vec& c) { return exact_class_posterior(w, c); });

  py::class_<PyModel>(m, "Model")
      .def_static("load",
                  [](const std::filesystem::path& p) {
                    return PyModel{std::shared_ptr<ConceptModel>(load_model(p))};
                  })
      .def("save", [](const PyModel& self, const std::filesystem::path& p) { save_model(p, *self.ptr); })
      .def_property_readonly("kind", [](const PyModel& s) { return to_string(s.ptr->kind()); })
      .def_property_readonly("input_dim", [](const PyModel& s) { return s.ptr->input_dim(); })
      .def_property_readonly("num_concepts", [](const PyModel& s) { return s.ptr->num_concepts(); })
      .def_property_readonly("num_classes", [](const PyModel& s) { return s.ptr->num_classes(); })
      .def_property_readonly("checksum", [](const PyModel& s) { return s.ptr->checksum(); })
      .def("config", [](const PyModel& s) { return to_py(s.ptr->config_json()); })
      .def("predict_concepts",
           [](const PyModel& s, const Vec& x) { return s.ptr->predict_concepts(x).probs; })
      .def(
          "predict_logits",
          [](const PyModel& s, const Vec& x, const std::optional<Vec>& concepts) {
            const ConceptPrediction pred = s.ptr->predict_concepts(x);
            return s.ptr->predict_logits(pred, concepts ? *concepts : pred.probs);
          },
          py::arg("x"), py::arg("concepts") = py::none())
      .def("task_accuracy",
           [](const PyModel& s, const py::dict& d) { return task_accuracy(*s.ptr, dataset_from_py(d)); })
      .def("concept_bce",
           [](const PyModel& s, const py::dict& d) { return concept_bce(*s.ptr, dataset_from_py(d)); });

  py::class_<PyRealigner>(m, "Realigner")
      .def_static("load",
                  [](const std::filesystem::path& p) {
                    LoadedRealigner lr = load_realigner(p);
                    return PyRealigner{std::make_shared<Realigner>(std::move(lr.realigner)),
                                       lr.base_checksum};
                  })
      .def("save",
           [](const PyRealigner& self, const std::filesystem::path& p) {
             save_realigner(p, *self.ptr, self.base_checksum);
           })
      .def_property_readonly("num_concepts", [](const PyRealigner& s) { return s.ptr->num_concepts(); })
      .def_property_readonly("base_checksum", [](const PyRealigner& s) { return s.base_checksum; })
      .def("config", [](const PyRealigner& s) { return to_py(to_json(s.ptr->config())); })
      .def(
          "realign",
          [](const PyRealigner& s, const Vec& values, const std::set<std::size_t>& S) {
            return realign_masked(*s.ptr, values, S);
          },
          py::arg("values"), py::arg("intervened"));

  py::class_<PyExperiment>(m, "Experiment")
      .def(py::init([](const std::string& world, std::uint64_t seed, const py::object& config) {
             const WorldEntry e = resolve_world(world, seed);
             return PyExperiment{std::make_unique<Workbench>(
                 make_workbench(e.name, e.world, seed, experiment_arg(config)))};
           }),
           py::arg("world"), py::arg("seed") = 1, py::arg("config") = py::none())
      .def_property_readonly("world", [](const PyExperiment& s) { return s.wb->world; })
      .def("split",
           [](const PyExperiment& s, const std::string& which) {
             const Workbench& wb = *s.wb;
             const Dataset* d = which == "train" ? &wb.data.train
                                : which == "val" ? &wb.data.val
                                : which == "test" ? &wb.data.test
                                                  : nullptr;
             if (!d) throw ValueError("split must be train, val or test");
             return dataset_to_py(*d, wb.world.input_dim, wb.world.num_concepts);
           })
      .def(
          "model",
          [](PyExperiment& s, const std::string& kind) {
            py::gil_scoped_release release;
            const ConceptModel& mdl = s.wb->model(model_kind_from_string(kind));
            return PyModel{std::shared_ptr<ConceptModel>(mdl.clone())};
          },
          py::arg("kind") = "sequential")
      .def(
          "realigner",
          [](PyExperiment& s, const std::string& kind, const py::object& config) {
            std::optional<RealignerConfig> rc;
            if (!config.is_none()) {
              json merged = to_json(resolved_realigner_config(s.wb->config, s.wb->world.num_concepts));
              merged.merge_patch(from_py(config));
              rc = realigner_config_from_json(merged);
            }
            const ModelKind mk = model_kind_from_string(kind);
            py::gil_scoped_release release;
            const Realigner& r = s.wb->realigner(mk, rc);
            return PyRealigner{std::make_shared<Realigner>(r), s.wb->model(mk).checksum()};
          },
          py::arg("kind") = "sequential", py::arg("config") = py::none());

  m.def(
      "run_trajectory",
      [](const PyModel& model, const py::object& realigner, const Vec& x, const Vec& c,
         std::size_t y, const py::object& policy, std::optional<std::size_t> T,
         const GenerativeWorld* world, std::uint64_t stream) {
        const SelectionUnits units = units_for(*model.ptr, world);
        const TrajectoryResult res =
            run_trajectory(*model.ptr, realigner_ptr(realigner), policy_arg(policy),
                           T.value_or(units.size()), SampleRecord{x, c, y}, units, stream);
        json steps = json::array();
        for (const auto& s : res.steps) steps.push_back(to_json(s));
        return to_py(steps);
      },
      py::arg("model"), py::arg("realigner"), py::arg("x"), py::arg("c"), py::arg("y"),
      py::arg("policy") = "ucp", py::arg("T") = py::none(), py::arg("world") = nullptr,
      py::arg("stream") = 0,
      "Steps t = 0..T as dicts; units follow the world's groups when given.");

  m.def(
      "evaluate_curves",
      [](const PyModel& model, const py::object& realigner, const py::dict& data,
         const py::object& policy, std::optional<std::size_t> T, const GenerativeWorld* world) {
        const SelectionUnits units = units_for(*model.ptr, world);
        const Dataset test = dataset_from_py(data);
        const Realigner* r = realigner_ptr(realigner);
        const PolicyKind p = policy_arg(policy);
        CurvePair cp;
        {
          py::gil_scoped_release release;
          cp = evaluate_curves(*model.ptr, r, p, T.value_or(units.size()), test, units);
        }
        return to_py(curves_to_json(cp));
      },
      py::arg("model"), py::arg("realigner"), py::arg("data"), py::arg("policy") = "ucp",
      py::arg("T") = py::none(), py::arg("world") = nullptr);

  m.def("auc", py::overload_cast<const Vec&>(&auc), py::arg("values"),
        "Trapezoid area over integer steps t = 0..T.");

  m.def("default_experiment_config", [] { return to_py(to_json(default_experiment_config())); });

  m.def(
      "run_benchmark",
      [](const std::vector<std::string>& worlds, const std::vector<std::string>& kinds,
         const std::vector<std::uint64_t>& seeds, const py::object& config) {
        SuiteSpec spec;
        spec.worlds = worlds;
        spec.kinds.clear();
        for (const auto& k : kinds) spec.kinds.push_back(model_kind_from_string(k));
        spec.seeds = seeds;
        spec.config = experiment_arg(config);
        BenchmarkResult res;
        {
          py::gil_scoped_release release;
          res = run_benchmark(spec);
        }
        json rows = json::array();
        for (const auto& r : res.rows) {
          rows.push_back({{"world", r.world},
                          {"kind", to_string(r.kind)},
                          {"realigned", r.realigned},
                          {"seed", r.seed},
                          {"concept_loss_auc", r.concept_loss_auc},
                          {"accuracy_auc", r.accuracy_auc}});
        }
        return to_py({{"rows", rows}, {"table", table_to_json(res.table)},
                      {"errors", errors_to_json(res.errors)}});
      },
      py::arg("worlds") = std::vector<std::string>{"medium"},
      py::arg("kinds") = std::vector<std::string>{"sequential", "independent", "joint", "cem"},
      py::arg("seeds") = std::vector<std::uint64_t>{1, 2, 3}, py::arg("config") = py::none());

  m.def(
      "run_ablation",
      [](const std::string& kind, const std::string& world, const std::vector<std::uint64_t>& seeds,
         const std::string& base, const py::object& config) {
        AblationSpec spec;
        spec.kind = ablation_kind_from_string(kind);
        spec.world = world;
        spec.seeds = seeds;
        spec.base = model_kind_from_string(base);
        spec.config = experiment_arg(config);
        AblationResult res;
        {
          py::gil_scoped_release release;
          res = run_ablation(spec);
        }
        json rows = json::array();
        for (const auto& r : res.rows) {
          rows.push_back({{"arm", r.arm},
                          {"seed", r.seed},
                          {"concept_loss_auc", r.concept_loss_auc},
                          {"accuracy_auc", r.accuracy_auc}});
        }
        return to_py({{"kind", to_string(res.kind)}, {"rows", rows},
                      {"table", table_to_json(res.table)}, {"errors", errors_to_json(res.errors)}});
      },
      py::arg("kind"), py::arg("world") = "medium",
      py::arg("seeds") = std::vector<std::uint64_t>{1, 2, 3}, py::arg("base") = "sequential",
      py::arg("config") = py::none());

  py::class_<SessionManager>(m, "SessionManager")
      .def(py::init([](const PyModel& model, const py::object& realigner,
                       const GenerativeWorld* world, const py::object& samples, bool debug) {
             std::shared_ptr<const Realigner> r;
             if (!realigner.is_none()) r = realigner.cast<PyRealigner&>().ptr;
             Dataset data;
             if (!samples.is_none()) data = dataset_from_py(samples.cast<py::dict>());
             ServiceConfig cfg;
             cfg.debug = debug;
             std::vector<ServedModel> served{
                 make_served_model("default", model.ptr, std::move(r), world, std::move(data))};
             return std::make_unique<SessionManager>(std::move(served), cfg);
           }),
           py::arg("model"), py::arg("realigner") = py::none(), py::arg("world") = nullptr,
           py::arg("samples") = py::none(), py::arg("debug") = false)
      .def(
          "handle",
          [](SessionManager& s, const std::string& method, const std::string& path,
             const py::object& body) {
            const std::string text = body.is_none()                 ? std::string()
                                     : py::isinstance<py::str>(body) ? body.cast<std::string>()
                                                                     : from_py(body).dump();
            const ServiceResponse r = s.handle(method, path, text);
            return py::make_tuple(r.status, to_py(r.body));
          },
          py::arg("method"), py::arg("path"), py::arg("body") = py::none(),
          "Routes one request the way the HTTP server does; returns (status, body).");
}
