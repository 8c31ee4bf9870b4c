#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nlohmann/json.hpp"
#include "oocdm/harness.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

oocdm::EnvConfig env_from_json(const std::string& env_json) {
  const json j = json::parse(env_json);
  oocdm::EnvConfig cfg;
  cfg.name = j.at("name").get<std::string>();
  if (j.contains("counts"))
    for (const auto& [name, v] : j.at("counts").items()) cfg.counts[name] = v.get<int>();
  return cfg;
}

oocdm::Tensor tensor_from_py(const py::object& obj) {
  if (py::isinstance<py::list>(obj) && py::len(obj) > 0 &&
      py::isinstance<py::list>(obj.cast<py::list>()[0])) {
    auto rows = obj.cast<std::vector<std::vector<double>>>();
    const int r = static_cast<int>(rows.size());
    const int c = static_cast<int>(rows[0].size());
    oocdm::Tensor t = oocdm::Tensor::zeros({r, c});
    for (int i = 0; i < r; ++i)
      for (int j2 = 0; j2 < c; ++j2) t.at(i, j2) = rows[i][j2];
    return t;
  }
  return oocdm::Tensor::vec(obj.cast<std::vector<double>>());
}

py::object tensor_to_py(const oocdm::Tensor& t) {
  if (t.rank() == 2) {
    py::list rows;
    for (int r = 0; r < t.rows(); ++r) {
      py::list row;
      for (int c = 0; c < t.cols(); ++c) row.append(t.at(r, c));
      rows.append(row);
    }
    return rows;
  }
  py::list out;
  for (double v : t.data) out.append(v);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "object-oriented causal dynamics model toolkit";

  m.def("eval_primitive",
        [](const std::string& kind, const py::list& inputs) {
          std::vector<oocdm::Tensor> tensors;
          for (const auto& obj : inputs)
            tensors.push_back(tensor_from_py(py::reinterpret_borrow<py::object>(obj)));
          return tensor_to_py(oocdm::eval_primitive(kind, tensors));
        },
        py::arg("kind"), py::arg("inputs"),
        "evaluate one tensor primitive on constant inputs");

  m.def("schema_json",
        [](const std::string& env_json) {
          return oocdm::schema_to_json(oocdm::make_env(env_from_json(env_json))->schema())
              .dump();
        },
        py::arg("env"), "schema of an environment as JSON");

  m.def("ground_sizes",
        [](const std::string& env_json) {
          auto env = oocdm::make_env(env_from_json(env_json));
          return py::make_tuple(env->layout().n(), env->layout().n_state());
        },
        py::arg("env"), "grounded variable counts (inputs, next-state)");

  m.def("ground_truth_graph_json",
        [](const std::string& env_json) {
          auto env = oocdm::make_env(env_from_json(env_json));
          return oocdm::graph_to_json(env->schema(), env->ground_truth_graph()).dump();
        },
        py::arg("env"), "analytic class-level graph of an environment");

  m.def("graph_accuracy",
        [](const std::string& env_json, const std::string& graph_json) {
          auto env = oocdm::make_env(env_from_json(env_json));
          const oocdm::Oocg g =
              oocdm::graph_from_json(env->schema(), json::parse(graph_json));
          return oocdm::graph_accuracy(oocdm::ground_graph(g, env->layout()),
                                       env->ground_truth_adjacency());
        },
        py::arg("env"), py::arg("graph"),
        "grounded accuracy of a class-level graph against the environment truth");

  m.def("collect",
        [](const std::string& env_json, const std::string& policy, int steps,
           double noise_sigma, std::uint64_t seed, bool ood, const std::string& path) {
          oocdm::Dataset ds =
              oocdm::collect(env_from_json(env_json), policy, steps, noise_sigma, seed, ood);
          oocdm::save_dataset(path, ds);
          return ds.records.size();
        },
        py::arg("env"), py::arg("policy"), py::arg("steps"), py::arg("noise_sigma"),
        py::arg("seed"), py::arg("ood"), py::arg("path"),
        "roll episodes and write a dataset file");

  m.def("run_experiment",
        [](const std::string& config_json) {
          oocdm::Report report =
              oocdm::run_experiment(oocdm::experiment_from_json(json::parse(config_json)));
          return oocdm::report_to_json(report).dump();
        },
        py::arg("config"), "full collect/train/discover/eval/plan pipeline",
        py::call_guard<py::gil_scoped_release>());

  m.def("checkpoint_aill",
        [](const std::string& stem, const std::string& dataset_path) {
          oocdm::Dataset ds = oocdm::load_dataset(dataset_path);
          oocdm::ModelBundle bundle = oocdm::load_checkpoint(stem, ds.schema);
          auto rows = oocdm::eval_likelihood(bundle, {{"data", &ds}});
          if (!rows[0].finite) throw std::runtime_error("AILL overflowed");
          return rows[0].value;
        },
        py::arg("stem"), py::arg("dataset"),
        "average instance log-likelihood of a checkpoint on a dataset");

  m.def("discover_checkpoint",
        [](const std::string& stem, const std::string& dataset_path, double epsilon) {
          oocdm::Dataset ds = oocdm::load_dataset(dataset_path);
          oocdm::ModelBundle bundle = oocdm::load_checkpoint(stem, ds.schema);
          auto [graph, report] =
              oocdm::discover(*bundle.oocdm, oocdm::all_records(ds), epsilon);
          json out = {{"graph", oocdm::graph_to_json(ds.schema, graph)},
                      {"report", oocdm::cmi_report_to_json(report)}};
          return out.dump();
        },
        py::arg("stem"), py::arg("dataset"), py::arg("epsilon"),
        "class-level causal discovery with a trained checkpoint",
        py::call_guard<py::gil_scoped_release>());

  m.def("oracle_mpc_episode",
        [](const std::string& env_json, int horizon, int n_plan, int k, int k_star,
           double gamma, std::uint64_t seed, bool ood) {
          auto env = oocdm::make_env(env_from_json(env_json));
          oocdm::SimulatorRollout sim(*env);
          oocdm::PlanConfig cfg;
          cfg.horizon = horizon;
          cfg.n_plan = n_plan;
          cfg.k = k;
          cfg.k_star = k_star;
          cfg.gamma = gamma;
          oocdm::Rng rng(seed);
          return oocdm::mpc_episode(*env, sim, cfg, rng, ood);
        },
        py::arg("env"), py::arg("horizon"), py::arg("n_plan"), py::arg("k"),
        py::arg("k_star"), py::arg("gamma"), py::arg("seed"), py::arg("ood") = false,
        "one MPC episode planned against the true simulator",
        py::call_guard<py::gil_scoped_release>());
}
