#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "confikd/pipeline.hpp"

namespace py = pybind11;
using namespace confikd;

PYBIND11_MODULE(_confikd, m) {
    m.doc() = "Group-shift distillation benchmark with confidence-guided augmentation";

    m.def("config_objective", &config_objective, py::arg("t_y"), py::arg("f_y"), py::arg("gamma"));
    m.def("rank_auc", &rank_auc, py::arg("negative_scores"), py::arg("positive_scores"));
    m.def("cosine_lr", &cosine_lr, py::arg("base_lr"), py::arg("step"), py::arg("total_steps"));
    m.def("derive_seed",
          [](std::uint64_t master, const std::string& tag) { return derive_seed(master, tag); });
    m.def("default_config_json", [] { return ExperimentConfig().to_json_string(); });

    py::class_<World>(m, "World")
        .def(py::init([](const std::string& config_json) {
                 return build_world(ExperimentConfig::from_json_string(config_json));
             }),
             py::arg("config_json"))
        .def("bayes_posterior",
             [](const World& w, const Vec& x, const std::string& split) {
                 return w.bayes_posterior(x, split_from_name(split));
             })
        .def("pstar", &World::pstar)
        .def("posterior_discrepancy", &World::posterior_discrepancy)
        .def("sample",
             [](const World& w, const std::string& split, std::size_t n, std::uint64_t seed) {
                 const GroupedDataset ds = w.sample_split(split_from_name(split), n, seed);
                 std::vector<std::tuple<Vec, int, std::string>> rows;
                 rows.reserve(ds.size());
                 for (const auto& e : ds.examples) rows.emplace_back(e.x, e.y, e.group.str());
                 return rows;
             })
        .def("num_groups", [](const World& w) { return w.groups().size(); });

    auto run = [](int (*fn)(const ExperimentConfig&), const std::string& config_json) {
        return fn(ExperimentConfig::from_json_string(config_json));
    };
    m.def("run_bench", [run](const std::string& j) { return run(cmd_bench, j); });
    m.def("run_train", [run](const std::string& j) { return run(cmd_train, j); });
    m.def("run_augment", [run](const std::string& j) { return run(cmd_augment, j); });
    m.def("run_eval", [run](const std::string& j) { return run(cmd_eval, j); });
    m.def("run_verify_theory", [run](const std::string& j) { return run(cmd_verify_theory, j); });
    m.def("run_pipeline", [](const std::string& config_json) {
        PipelineResult r;
        cmd_pipeline(ExperimentConfig::from_json_string(config_json), &r);
        py::dict d;
        d["worst_group"] = r.worst_group;
        d["group_mean"] = r.group_mean;
        d["sample_mean"] = r.sample_mean;
        d["agreement_present"] = r.agreement_present;
        d["agreement_absent"] = r.agreement_absent;
        return d;
    });
    m.def("run_sweep_multiplicity", [](const std::string& config_json, std::vector<int> m_list) {
        return cmd_sweep_multiplicity(ExperimentConfig::from_json_string(config_json), m_list);
    });
}
