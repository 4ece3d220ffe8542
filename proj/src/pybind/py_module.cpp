// Python bindings for the core operations: dataset synthesis, training,
// attacks, robustness scoring, and the margin probe. Images cross the
// boundary as flat row-major pixel lists to keep dependencies minimal.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "protoshield/attacks.hpp"
#include "protoshield/blas_backend.hpp"
#include "protoshield/common.hpp"
#include "protoshield/config.hpp"
#include "protoshield/data.hpp"
#include "protoshield/eval.hpp"
#include "protoshield/losses.hpp"
#include "protoshield/model.hpp"
#include "protoshield/train.hpp"

namespace py = pybind11;
using namespace protoshield;

namespace {

struct PyModel {
    Model model;
    std::vector<PrototypeSet> protos;
    double train_accuracy = 0.0;
    std::string variant;

    EvalTarget target() const { return {&model, &protos, variant}; }
};

Tensor features_tensor(const std::vector<std::vector<double>>& rows, const char* what) {
    if (rows.empty()) throw ConfigError(std::string(what) + ": no rows");
    int64_t dim = static_cast<int64_t>(rows.front().size());
    std::vector<double> flat;
    flat.reserve(rows.size() * static_cast<size_t>(dim));
    for (const std::vector<double>& r : rows) {
        if (static_cast<int64_t>(r.size()) != dim)
            throw ConfigError(std::string(what) + ": ragged rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor::from_vec({static_cast<int64_t>(rows.size()), dim}, std::move(flat));
}

AttackConfig make_attack(const std::string& kind, double epsilon, int steps, double c, int iters,
                         uint64_t seed, const std::string& loss) {
    AttackConfig cfg;
    cfg.kind = attack_kind_from_name(kind);
    cfg.epsilon = epsilon;
    cfg.steps = steps;
    cfg.c = c;
    cfg.iters = iters;
    cfg.seed = seed;
    if (loss == "ce") cfg.loss_mode = LossMode::ce;
    else if (loss == "joint") cfg.loss_mode = LossMode::joint;
    else throw ConfigError("loss must be 'ce' or 'joint'");
    cfg.validate();
    return cfg;
}

py::dict batch_summary(const AdvBatch& batch) {
    int64_t hits = 0;
    double linf_max = 0.0;
    for (size_t i = 0; i < batch.labels.size(); ++i) {
        hits += batch.adv_pred[i] == batch.labels[i];
        linf_max = std::max(linf_max, batch.linf[i]);
    }
    py::dict d;
    d["accuracy"] = double(hits) / double(batch.labels.size());
    d["success_rate"] = 1.0 - double(hits) / double(batch.labels.size());
    d["linf_max"] = linf_max;
    d["n"] = batch.labels.size();
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "prototype-conformity adversarial robustness workbench";
    m.attr("__version__") = kVersion;
    m.def("blas_backend", &blas::backend_name, "name of the loaded GEMM backend");

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<FormatError>(m, "FormatError");

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("size", &Dataset::size)
        .def_readonly("labels", &Dataset::labels)
        .def_readonly("num_classes", &Dataset::num_classes)
        .def_readonly("split", &Dataset::split)
        .def_readonly("provenance", &Dataset::provenance)
        .def_property_readonly("shape", [](const Dataset& d) { return d.images.shape(); })
        .def("image", [](const Dataset& d, int64_t i) {
            if (i < 0 || i >= d.size()) throw ConfigError("image index out of range");
            int64_t pix = d.images.numel() / d.size();
            const double* p = d.images.data() + i * pix;
            return std::vector<double>(p, p + pix);
        });

    m.def("synth_blobs",
          [](int num_classes, int64_t n_per_class, std::vector<int64_t> shape, double spread,
             uint64_t seed, std::optional<uint64_t> template_seed) {
              return synth_blobs(num_classes, n_per_class, std::move(shape), spread, seed,
                                 template_seed.value_or(seed));
          },
          py::arg("num_classes"), py::arg("n_per_class"),
          py::arg("shape") = std::vector<int64_t>{1, 28, 28}, py::arg("spread") = 0.08,
          py::arg("seed") = 1, py::arg("template_seed") = std::nullopt);
    m.def("synth_digits", &synth_digits, py::arg("n_total"), py::arg("seed") = 1);
    m.def("load_idx", &load_idx, py::arg("images_path"), py::arg("labels_path"));
    m.def("save_dataset", &save_dataset, py::arg("path"), py::arg("dataset"));
    m.def("load_dataset", &load_dataset, py::arg("path"));

    m.def("cross_entropy_value",
          [](const std::vector<std::vector<double>>& logits, const std::vector<int>& labels) {
              return cross_entropy(features_tensor(logits, "logits"), labels).item();
          },
          py::arg("logits"), py::arg("labels"));
    m.def("prototype_conformity_value",
          [](const std::vector<std::vector<double>>& features, const std::vector<int>& labels,
             const std::vector<std::vector<double>>& centroids) {
              PrototypeSet protos{features_tensor(centroids, "centroids")};
              return prototype_conformity(features_tensor(features, "features"), labels, protos)
                  .item();
          },
          py::arg("features"), py::arg("labels"), py::arg("centroids"));

    py::class_<PyModel>(m, "Model")
        .def_readonly("train_accuracy", &PyModel::train_accuracy)
        .def_readonly("variant", &PyModel::variant)
        .def_property_readonly("param_count",
                               [](const PyModel& pm) { return pm.model.spec.param_count(); })
        .def("predict",
             [](const PyModel& pm, const Dataset& data, bool prototype) {
                 return predict(pm.target(), data.images, prototype);
             },
             py::arg("data"), py::arg("prototype") = false)
        .def("clean_accuracy",
             [](const PyModel& pm, const Dataset& data, bool prototype) {
                 return clean_accuracy(pm.target(), data, prototype);
             },
             py::arg("data"), py::arg("prototype") = false)
        .def("attack",
             [](const PyModel& pm, const Dataset& data, const std::string& kind, double epsilon,
                int steps, double c, int iters, uint64_t seed, const std::string& loss) {
                 AttackConfig cfg = make_attack(kind, epsilon, steps, c, iters, seed, loss);
                 return batch_summary(attack_dataset(pm.model, pm.protos, data, cfg, 256));
             },
             py::arg("data"), py::arg("kind") = "pgd", py::arg("epsilon") = 0.3,
             py::arg("steps") = 10, py::arg("c") = 1.0, py::arg("iters") = 1000,
             py::arg("seed") = 0, py::arg("loss") = "ce")
        .def("margin_ratio",
             [](const PyModel& pm, const Dataset& data, double epsilon, int samples, int draws,
                uint64_t seed) {
                 EvalTarget t = pm.target();
                 return margin_probe(t, data, epsilon, samples, draws, seed).ratio;
             },
             py::arg("data"), py::arg("epsilon") = 0.1, py::arg("samples") = 32,
             py::arg("draws") = 200, py::arg("seed") = 1)
        .def("save",
             [](const PyModel& pm, const std::string& path) {
                 CheckpointMeta meta;
                 meta.variant = pm.variant;
                 save_checkpoint(path, pm.model, pm.protos, meta);
             },
             py::arg("path"));

    m.def("train_model",
          [](const std::string& config_json, std::optional<Dataset> data) {
              RunConfig cfg = parse_run_config(config_json);
              Dataset local = data ? std::move(*data) : load_split(cfg, "train");
              TrainResult res = train(spec_for(cfg), local, train_config_for(cfg));
              PyModel pm{std::move(res.model), std::move(res.protos),
                         res.log.epochs.empty() ? 0.0 : res.log.epochs.back().clean_acc,
                         cfg.variant};
              return pm;
          },
          py::arg("config_json") = "{}", py::arg("data") = std::nullopt,
          "train per a JSON run config; data overrides the config's train split");
    m.def("load_model", [](const std::string& path) {
        Checkpoint ck = load_checkpoint(path);
        return PyModel{std::move(ck.model), std::move(ck.protos), 0.0, ck.meta.variant};
    });

    m.def("config_hash_hex", [](const std::string& config_json) {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(
                          config_hash(parse_run_config(config_json))));
        return std::string(buf);
    });
}
