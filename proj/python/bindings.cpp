#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "stprompt/analysis.hpp"
#include "stprompt/train.hpp"

namespace py = pybind11;
using namespace stprompt;
using F = float;

namespace {

template <typename T>
Tensor<T> tensor_from_numpy(const py::array_t<T>& in) {
  auto a = py::array_t<T, py::array::c_style | py::array::forcecast>::ensure(in);
  Shape shape(static_cast<std::size_t>(a.ndim()));
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    shape[std::size_t(i)] = std::size_t(a.shape(i));
  Tensor<T> t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

template <typename T>
py::array_t<T> numpy_from_tensor(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

nlohmann::json json_from_dict(const py::dict& d) {
  nlohmann::json j = nlohmann::json::object();
  for (auto item : d) {
    const std::string key = py::cast<std::string>(item.first);
    const py::handle v = item.second;
    if (py::isinstance<py::bool_>(v))
      j[key] = py::cast<bool>(v);
    else if (py::isinstance<py::int_>(v))
      j[key] = py::cast<std::int64_t>(v);
    else if (py::isinstance<py::float_>(v))
      j[key] = py::cast<double>(v);
    else if (py::isinstance<py::str>(v))
      j[key] = py::cast<std::string>(v);
    else
      throw ConfigError("unsupported config value for key '" + key + "'");
  }
  return j;
}

RunConfig config_from_dict(const py::dict& d) {
  RunConfig cfg = RunConfig::from_json(json_from_dict(d));
  cfg.validate();
  return cfg;
}

py::dict dict_from_metrics(const MetricReport& r) {
  py::dict d;
  d["mae"] = r.mae;
  d["rmse"] = r.rmse;
  if (r.mape)
    d["mape"] = *r.mape;
  else
    d["mape"] = py::none();
  return d;
}

py::dict dict_from_result(const TrainResult<F>& res) {
  py::dict d;
  d["test"] = dict_from_metrics(res.test);
  d["optimizer_steps"] = res.optimizer_steps;
  d["epochs"] = res.epochs_run;
  py::list logs;
  for (const auto& el : res.logs) {
    py::dict e;
    e["epoch"] = el.epoch;
    e["dataset"] = el.dataset;
    e["train_loss"] = el.train_loss;
    e["val_mae"] = el.val.mae;
    logs.append(e);
  }
  d["logs"] = logs;
  return d;
}

ShiftSpec shift_from_kwargs(double amplitude_scale, double amplitude_jitter,
                            double phase, double weekly_amp, double noise,
                            double diffusion, double graph_theta,
                            double graph_kappa) {
  ShiftSpec s;
  s.amplitude_scale = amplitude_scale;
  s.amplitude_jitter = amplitude_jitter;
  s.phase = phase;
  s.weekly_amp = weekly_amp;
  s.noise = noise;
  s.diffusion = diffusion;
  s.graph_theta = graph_theta;
  s.graph_kappa = graph_kappa;
  return s;
}

}  // namespace

PYBIND11_MODULE(_stprompt, m) {
  m.doc() = "spatio-temporal prompt-tuning core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<STDataset<F>>(m, "Dataset")
      .def_readwrite("name", &STDataset<F>::name)
      .def_readonly("steps_per_day", &STDataset<F>::steps_per_day)
      .def_property_readonly(
          "x", [](const STDataset<F>& d) { return numpy_from_tensor(d.x); })
      .def_property_readonly("regions",
                             [](const STDataset<F>& d) { return d.regions(); })
      .def_property_readonly(
          "adjacency",
          [](const STDataset<F>& d) {
            if (!d.graph) throw ConfigError("dataset has no graph");
            return numpy_from_tensor(d.graph->adjacency);
          })
      .def("save", [](const STDataset<F>& d, const std::string& path) {
        save_dataset(d, path);
      });

  m.def(
      "gen_synth",
      [](std::uint64_t seed, std::size_t regions, std::size_t steps,
         std::size_t features, std::size_t steps_per_day,
         double amplitude_scale, double amplitude_jitter, double phase,
         double weekly_amp, double noise, double diffusion,
         double graph_theta, double graph_kappa) {
        return gen_synthetic<F>(
            seed, regions, steps, features,
            shift_from_kwargs(amplitude_scale, amplitude_jitter, phase,
                              weekly_amp, noise, diffusion, graph_theta,
                              graph_kappa),
            steps_per_day);
      },
      py::arg("seed"), py::arg("regions"), py::arg("steps"),
      py::arg("features") = 1, py::arg("steps_per_day") = 288,
      py::arg("amplitude_scale") = 10.0, py::arg("amplitude_jitter") = 0.5,
      py::arg("phase") = 0.0, py::arg("weekly_amp") = 0.2,
      py::arg("noise") = 0.1, py::arg("diffusion") = 0.3,
      py::arg("graph_theta") = 0.5, py::arg("graph_kappa") = 0.45,
      "Generate a synthetic spatio-temporal dataset with an attached graph.");

  m.def("load_dataset",
        [](const std::string& path) { return load_dataset<F>(path); });

  // ---- graph operations (double precision) ----

  m.def("normalized_laplacian", [](py::array_t<double> adj) {
    return numpy_from_tensor(normalized_laplacian(tensor_from_numpy(adj)));
  });
  m.def("eigh_jacobi", [](py::array_t<double> sym) {
    auto eig = jacobi_eigendecompose(tensor_from_numpy(sym));
    py::list vals;
    for (double v : eig.values) vals.append(v);
    return py::make_tuple(vals, numpy_from_tensor(eig.vectors));
  });
  m.def(
      "spatial_context",
      [](py::array_t<double> adjacency, std::size_t d_r) {
        auto g = RoadGraph::from_adjacency(tensor_from_numpy(adjacency));
        return numpy_from_tensor(spatial_context(g, d_r));
      },
      py::arg("adjacency"), py::arg("d_r"));

  // ---- objectives and metrics ----

  m.def(
      "metrics",
      [](py::array_t<double> y, py::array_t<double> yhat, double eps) {
        return dict_from_metrics(
            metrics(tensor_from_numpy(y), tensor_from_numpy(yhat), eps));
      },
      py::arg("y"), py::arg("yhat"), py::arg("mape_epsilon") = 1e-3);

  m.def(
      "uniformity_loss",
      [](py::array_t<double> emb, double tau, const std::string& sign) {
        UniformitySign s;
        if (sign == "separation")
          s = UniformitySign::Separation;
        else if (sign == "literal")
          s = UniformitySign::Literal;
        else
          throw ConfigError("sign must be 'separation' or 'literal'");
        Var<double> e = Var<double>::constant(tensor_from_numpy(emb));
        return double(uniformity_loss(e, tau, s).value()[0]);
      },
      py::arg("embeddings"), py::arg("tau") = 0.3,
      py::arg("sign") = "separation",
      "Uniformity loss value of a (B,R,F,d') embedding tensor.");

  // ---- analysis ----

  m.def("pca2", [](py::array_t<double> x) {
    double vr[2];
    auto scores = pca2(tensor_from_numpy(x), vr);
    return py::make_tuple(numpy_from_tensor(scores),
                          py::make_tuple(vr[0], vr[1]));
  });
  m.def("unit_circle", [](py::array_t<double> pts) {
    auto res = unit_circle(tensor_from_numpy(pts));
    return py::make_tuple(numpy_from_tensor(res.points), res.dropped);
  });
  m.def("uniformity_stats", [](py::array_t<double> emb) {
    auto st = uniformity_stats(tensor_from_numpy(emb));
    py::dict d;
    d["mean_pairwise_cosine"] = st.mean_pairwise_cosine;
    d["circular_variance"] = st.circular_variance;
    d["uniformity_metric"] = st.uniformity_metric;
    return d;
  });

  // ---- training pipeline ----

  m.def(
      "pretrain",
      [](const std::vector<STDataset<F>>& datasets, const py::dict& config,
         const std::string& out) {
        RunConfig cfg = config_from_dict(config);
        std::vector<PreparedDataset<F>> prepared;
        for (const auto& ds : datasets)
          prepared.push_back(PreparedDataset<F>::prepare(ds, cfg));
        Trainer<F> tr(cfg);
        ParameterStore<F> store;
        std::mt19937_64 rng(cfg.seed);
        tr.init_all(store, rng);
        auto res = tr.pretrain(prepared, store, rng);
        if (!out.empty()) save_checkpoint(store, cfg, out);
        return dict_from_result(res);
      },
      py::arg("datasets"), py::arg("config"), py::arg("out") = std::string(),
      "Alternating pre-training; optionally writes a checkpoint.");

  m.def(
      "prompt_tune",
      [](const std::string& checkpoint, const STDataset<F>& dataset,
         const py::dict& overrides, const std::string& out) {
        auto ck = load_checkpoint<F>(checkpoint);
        RunConfig cfg = ck.config;
        if (overrides.contains("epochs"))
          cfg.tune_epochs = py::cast<std::size_t>(overrides["epochs"]);
        if (overrides.contains("seed"))
          cfg.seed = py::cast<std::uint64_t>(overrides["seed"]);
        if (overrides.contains("lr"))
          cfg.lr = py::cast<double>(overrides["lr"]);
        cfg.validate();
        auto target = PreparedDataset<F>::prepare(dataset, cfg);
        Trainer<F> tr(cfg);
        std::mt19937_64 rng(cfg.seed);
        auto res = tr.prompt_tune(target, ck.store, rng);
        if (!out.empty()) save_checkpoint(ck.store, cfg, out);
        return dict_from_result(res);
      },
      py::arg("checkpoint"), py::arg("dataset"),
      py::arg("overrides") = py::dict(), py::arg("out") = std::string(),
      "Prompt-tune against a frozen downstream backbone.");

  m.def(
      "evaluate",
      [](const std::string& checkpoint, const STDataset<F>& dataset,
         const std::string& split) {
        auto ck = load_checkpoint<F>(checkpoint);
        auto target = PreparedDataset<F>::prepare(dataset, ck.config);
        Trainer<F> tr(ck.config);
        const std::vector<WindowIndex>* w = &target.split.test;
        if (split == "val") w = &target.split.val;
        else if (split == "train") w = &target.split.train;
        else if (split != "test")
          throw ConfigError("split must be train, val, or test");
        return dict_from_metrics(tr.evaluate(ck.store, target, *w));
      },
      py::arg("checkpoint"), py::arg("dataset"), py::arg("split") = "test");

  m.def(
      "prompt_embeddings",
      [](const std::string& checkpoint, const STDataset<F>& dataset,
         std::size_t max_samples) {
        auto ck = load_checkpoint<F>(checkpoint);
        auto target = PreparedDataset<F>::prepare(dataset, ck.config);
        Trainer<F> tr(ck.config);
        const auto& windows = target.split.test;
        const std::size_t count = std::min(ck.config.batch, windows.size());
        auto batch = gather_batch(target.ds, windows, 0, count,
                                  ck.config.history, ck.config.horizon);
        Var<F> e = tr.prompt_net().forward(ck.store, batch, *target.ds.graph);
        const Shape& s = e.shape();
        const std::size_t rows =
            std::min<std::size_t>(s[0] * s[1] * s[2], max_samples);
        Tensor<double> out(Shape{rows, s[3]});
        for (std::size_t i = 0; i < rows * s[3]; ++i)
          out[i] = double(e.value()[i]);
        return numpy_from_tensor(out);
      },
      py::arg("checkpoint"), py::arg("dataset"),
      py::arg("max_samples") = 4096,
      "Prompt embeddings of one evaluation batch, one row per (b,r,f).");
}
