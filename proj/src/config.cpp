#include "protoshield/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "protoshield/common.hpp"
#include "protoshield/rng.hpp"

namespace protoshield {
namespace {

using nlohmann::json;

template <typename T>
T value_as(const json& j, const std::string& path) {
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("config key '" + path + "': " + e.what());
    }
}

void expect_object(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError("config section '" + path + "' must be an object");
}

void parse_data(const json& j, DataConfig& d) {
    expect_object(j, "data");
    for (const auto& [key, val] : j.items()) {
        std::string path = "data." + key;
        if (key == "source") d.source = value_as<std::string>(val, path);
        else if (key == "dir") d.dir = value_as<std::string>(val, path);
        else if (key == "images") d.images = value_as<std::string>(val, path);
        else if (key == "labels") d.labels = value_as<std::string>(val, path);
        else if (key == "eval_images") d.eval_images = value_as<std::string>(val, path);
        else if (key == "eval_labels") d.eval_labels = value_as<std::string>(val, path);
        else if (key == "path") d.path = value_as<std::string>(val, path);
        else if (key == "eval_path") d.eval_path = value_as<std::string>(val, path);
        else if (key == "train_n") d.train_n = value_as<int64_t>(val, path);
        else if (key == "eval_n") d.eval_n = value_as<int64_t>(val, path);
        else if (key == "classes") d.classes = value_as<int>(val, path);
        else if (key == "blob_spread") d.blob_spread = value_as<double>(val, path);
        else throw ConfigError("unknown config key '" + path + "'");
    }
    if (d.source != "digits" && d.source != "blobs" && d.source != "idx" && d.source != "file")
        throw ConfigError("data.source must be one of digits, blobs, idx, file");
    if (d.train_n < 1) throw ConfigError("data.train_n must be >= 1");
    if (d.eval_n < 1) throw ConfigError("data.eval_n must be >= 1");
    if (d.classes < 2) throw ConfigError("data.classes must be >= 2");
    if (d.blob_spread <= 0) throw ConfigError("data.blob_spread must be > 0");
}

void parse_train(const json& j, TrainConfig& t) {
    expect_object(j, "train");
    for (const auto& [key, val] : j.items()) {
        std::string path = "train." + key;
        if (key == "epochs") t.epochs = value_as<int>(val, path);
        else if (key == "warmup") t.warmup = value_as<int>(val, path);
        else if (key == "batch_size") t.batch_size = value_as<int>(val, path);
        else if (key == "lr") t.lr.base = value_as<double>(val, path);
        else if (key == "lr_decay_epochs") t.lr.decay_epochs = value_as<std::vector<int>>(val, path);
        else if (key == "lr_decay_factor") t.lr.decay_factor = value_as<double>(val, path);
        else if (key == "adv_eps_lo") t.adv_eps_lo = value_as<double>(val, path);
        else if (key == "adv_eps_hi") t.adv_eps_hi = value_as<double>(val, path);
        else if (key == "adv_steps") t.adv_steps = value_as<int>(val, path);
        else if (key == "adv_joint_loss") t.adv_joint_loss = value_as<bool>(val, path);
        else if (key == "pc_weights") t.pc_weights = value_as<std::vector<double>>(val, path);
        else if (key == "checkpoint_every") t.checkpoint_every = value_as<int>(val, path);
        else if (key == "verbose") t.verbose = value_as<bool>(val, path);
        else throw ConfigError("unknown config key '" + path + "'");
    }
    if (t.epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (t.warmup < 0 || t.warmup > t.epochs)
        throw ConfigError("train.warmup must lie in [0, train.epochs]");
    if (t.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (t.lr.base <= 0) throw ConfigError("train.lr must be > 0");
    if (t.adv_eps_lo < 0 || t.adv_eps_hi < t.adv_eps_lo)
        throw ConfigError("train.adv_eps_lo/adv_eps_hi must satisfy 0 <= lo <= hi");
    if (t.adv_steps < 1) throw ConfigError("train.adv_steps must be >= 1");
    if (t.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
}

void parse_attack(const json& j, AttackConfig& a) {
    expect_object(j, "attack");
    for (const auto& [key, val] : j.items()) {
        std::string path = "attack." + key;
        if (key == "kind") a.kind = attack_kind_from_name(value_as<std::string>(val, path));
        else if (key == "epsilon") a.epsilon = value_as<double>(val, path);
        else if (key == "steps") a.steps = value_as<int>(val, path);
        else if (key == "step_size") a.step_size = value_as<double>(val, path);
        else if (key == "decay") a.decay = value_as<double>(val, path);
        else if (key == "c") a.c = value_as<double>(val, path);
        else if (key == "kappa") a.kappa = value_as<double>(val, path);
        else if (key == "lr") a.lr = value_as<double>(val, path);
        else if (key == "iters") a.iters = value_as<int>(val, path);
        else if (key == "restarts") a.restarts = value_as<int>(val, path);
        else if (key == "clip_min") a.clip_min = value_as<double>(val, path);
        else if (key == "clip_max") a.clip_max = value_as<double>(val, path);
        else if (key == "loss") {
            std::string mode = value_as<std::string>(val, path);
            if (mode == "ce") a.loss_mode = LossMode::ce;
            else if (mode == "joint") a.loss_mode = LossMode::joint;
            else throw ConfigError("attack.loss must be 'ce' or 'joint'");
        } else {
            throw ConfigError("unknown config key '" + path + "'");
        }
    }
    a.validate();
}

void parse_eval(const json& j, EvalConfig& e) {
    expect_object(j, "eval");
    for (const auto& [key, val] : j.items()) {
        std::string path = "eval." + key;
        if (key == "attacks") e.attacks = value_as<std::vector<std::string>>(val, path);
        else if (key == "setting") e.setting = value_as<std::string>(val, path);
        else if (key == "prototype_pred") e.prototype_pred = value_as<bool>(val, path);
        else if (key == "sweep_grid") e.sweep_grid = value_as<std::vector<double>>(val, path);
        else if (key == "sweep_kinds") e.sweep_kinds = value_as<std::vector<std::string>>(val, path);
        else if (key == "probe_eps") e.probe_eps = value_as<double>(val, path);
        else if (key == "probe_draws") e.probe_draws = value_as<int>(val, path);
        else if (key == "probe_samples") e.probe_samples = value_as<int>(val, path);
        else if (key == "high_eps") e.high_eps = value_as<double>(val, path);
        else if (key == "batch_size") e.batch_size = value_as<int64_t>(val, path);
        else throw ConfigError("unknown config key '" + path + "'");
    }
    for (const std::string& name : e.attacks) attack_kind_from_name(name);
    for (const std::string& name : e.sweep_kinds) attack_kind_from_name(name);
    setting_from_name(e.setting);
    if (e.sweep_grid.empty() || e.sweep_grid.front() != 0.0)
        throw ConfigError("eval.sweep_grid must start at 0");
    for (size_t i = 1; i < e.sweep_grid.size(); ++i)
        if (e.sweep_grid[i] <= e.sweep_grid[i - 1])
            throw ConfigError("eval.sweep_grid must be strictly ascending");
    if (e.probe_eps < 0) throw ConfigError("eval.probe_eps must be >= 0");
    if (e.probe_draws < 1) throw ConfigError("eval.probe_draws must be >= 1");
    if (e.probe_samples < 2) throw ConfigError("eval.probe_samples must be >= 2");
    if (e.high_eps <= 0) throw ConfigError("eval.high_eps must be > 0");
    if (e.batch_size < 1) throw ConfigError("eval.batch_size must be >= 1");
}

const char* loss_mode_name(LossMode m) { return m == LossMode::ce ? "ce" : "joint"; }

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    expect_object(j, "<root>");

    RunConfig cfg;
    for (const auto& [key, val] : j.items()) {
        if (key == "seed") cfg.seed = value_as<uint64_t>(val, "seed");
        else if (key == "output_dir") cfg.output_dir = value_as<std::string>(val, "output_dir");
        else if (key == "variant") cfg.variant = value_as<std::string>(val, "variant");
        else if (key == "model") cfg.model = value_as<std::string>(val, "model");
        else if (key == "data") parse_data(val, cfg.data);
        else if (key == "train") parse_train(val, cfg.train);
        else if (key == "attack") parse_attack(val, cfg.attack);
        else if (key == "eval") parse_eval(val, cfg.eval);
        else throw ConfigError("unknown config key '" + key + "'");
    }

    if (cfg.variant != "ce-only" && cfg.variant != "pcl" && cfg.variant != "pcl-advfgsm" &&
        cfg.variant != "pcl-advpgd")
        throw ConfigError("variant must be one of ce-only, pcl, pcl-advfgsm, pcl-advpgd");
    if (cfg.output_dir.empty()) throw ConfigError("output_dir must not be empty");
    spec_for(cfg);  // rejects unknown model profiles before any compute
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["variant"] = cfg.variant;
    j["model"] = cfg.model;
    j["data"] = {{"source", cfg.data.source},
                 {"dir", cfg.data.dir},
                 {"images", cfg.data.images},
                 {"labels", cfg.data.labels},
                 {"eval_images", cfg.data.eval_images},
                 {"eval_labels", cfg.data.eval_labels},
                 {"path", cfg.data.path},
                 {"eval_path", cfg.data.eval_path},
                 {"train_n", cfg.data.train_n},
                 {"eval_n", cfg.data.eval_n},
                 {"classes", cfg.data.classes},
                 {"blob_spread", cfg.data.blob_spread}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"warmup", cfg.train.warmup},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr.base},
                  {"lr_decay_epochs", cfg.train.lr.decay_epochs},
                  {"lr_decay_factor", cfg.train.lr.decay_factor},
                  {"adv_eps_lo", cfg.train.adv_eps_lo},
                  {"adv_eps_hi", cfg.train.adv_eps_hi},
                  {"adv_steps", cfg.train.adv_steps},
                  {"adv_joint_loss", cfg.train.adv_joint_loss},
                  {"pc_weights", cfg.train.pc_weights},
                  {"checkpoint_every", cfg.train.checkpoint_every},
                  {"verbose", cfg.train.verbose}};
    j["attack"] = {{"kind", attack_kind_name(cfg.attack.kind)},
                   {"epsilon", cfg.attack.epsilon},
                   {"steps", cfg.attack.steps},
                   {"step_size", cfg.attack.step_size},
                   {"decay", cfg.attack.decay},
                   {"c", cfg.attack.c},
                   {"kappa", cfg.attack.kappa},
                   {"lr", cfg.attack.lr},
                   {"iters", cfg.attack.iters},
                   {"restarts", cfg.attack.restarts},
                   {"clip_min", cfg.attack.clip_min},
                   {"clip_max", cfg.attack.clip_max},
                   {"loss", loss_mode_name(cfg.attack.loss_mode)}};
    j["eval"] = {{"attacks", cfg.eval.attacks},
                 {"setting", cfg.eval.setting},
                 {"prototype_pred", cfg.eval.prototype_pred},
                 {"sweep_grid", cfg.eval.sweep_grid},
                 {"sweep_kinds", cfg.eval.sweep_kinds},
                 {"probe_eps", cfg.eval.probe_eps},
                 {"probe_draws", cfg.eval.probe_draws},
                 {"probe_samples", cfg.eval.probe_samples},
                 {"high_eps", cfg.eval.high_eps},
                 {"batch_size", cfg.eval.batch_size}};
    return j.dump();  // object keys are sorted, so the dump is canonical
}

uint64_t fnv1a64(const std::string& text) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t config_hash(const RunConfig& cfg) { return fnv1a64(run_config_json(cfg)); }

std::string resolve_output_dir(const RunConfig& cfg) {
    if (!cfg.output_dir.empty() && cfg.output_dir.front() == '/') return cfg.output_dir;
    if (const char* root = std::getenv("PROTOSHIELD_OUT"))
        return std::string(root) + "/" + cfg.output_dir;
    return cfg.output_dir;
}

ModelSpec spec_for(const RunConfig& cfg) {
    return ModelSpec::by_name(cfg.model, cfg.data.classes);
}

TrainConfig train_config_for(const RunConfig& cfg) {
    TrainConfig t = cfg.train;
    t.seed = cfg.seed;
    if (cfg.variant == "ce-only") {
        t.warmup = t.epochs;  // never enters the joint phase
        t.adv_mode = AdvMode::none;
    } else if (cfg.variant == "pcl") {
        t.adv_mode = AdvMode::none;
    } else if (cfg.variant == "pcl-advfgsm") {
        t.adv_mode = AdvMode::fgsm;
    } else if (cfg.variant == "pcl-advpgd") {
        t.adv_mode = AdvMode::pgd;
    } else {
        throw ConfigError("unknown variant '" + cfg.variant + "'");
    }
    return t;
}

AttackConfig attack_config_for(const RunConfig& cfg, const std::string& kind_name) {
    AttackConfig a = cfg.attack;
    a.kind = attack_kind_from_name(kind_name);
    a.validate();
    return a;
}

namespace {

// Prefers the plain file, falls back to a .gz sibling.
std::string idx_file(const std::string& dir, const std::string& base) {
    std::string plain = dir + "/" + base;
    if (std::filesystem::exists(plain)) return plain;
    if (std::filesystem::exists(plain + ".gz")) return plain + ".gz";
    throw ConfigError("data.dir: neither '" + plain + "' nor '" + plain + ".gz' exists");
}

}  // namespace

Dataset load_split(const RunConfig& cfg, const std::string& split) {
    if (split != "train" && split != "eval")
        throw UsageError("load_split: split must be 'train' or 'eval'");
    const DataConfig& d = cfg.data;
    bool train = split == "train";
    int64_t want = train ? d.train_n : d.eval_n;
    // Distinct derived seeds keep the splits disjoint for synthetic sources.
    uint64_t seed = train ? cfg.seed : splitmix64(cfg.seed ^ 0x517cc1b727220a95ULL);

    Dataset ds;
    if (d.source == "digits") {
        std::string dir = d.dir;
        if (dir.empty())
            if (const char* env = std::getenv("PROTOSHIELD_MNIST_DIR")) dir = env;
        if (!dir.empty()) {
            ds = load_idx(idx_file(dir, train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte"),
                          idx_file(dir, train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte"));
        } else {
            ds = synth_digits(want, seed);
        }
    } else if (d.source == "blobs") {
        int64_t per_class = (want + d.classes - 1) / d.classes;
        // Templates follow the run seed on both splits so eval measures
        // generalization to fresh noise, not to unrelated classes.
        ds = synth_blobs(d.classes, per_class, {1, 28, 28}, d.blob_spread, seed, cfg.seed);
    } else if (d.source == "idx") {
        const std::string& images = train ? d.images : d.eval_images;
        const std::string& labels = train ? d.labels : d.eval_labels;
        if (images.empty())
            throw ConfigError(std::string("data.") + (train ? "images" : "eval_images") +
                              " is required for data.source=idx");
        if (labels.empty())
            throw ConfigError(std::string("data.") + (train ? "labels" : "eval_labels") +
                              " is required for data.source=idx");
        ds = load_idx(images, labels);
    } else {  // "file", validated at parse time
        const std::string& path = train ? d.path : d.eval_path;
        if (path.empty())
            throw ConfigError(std::string("data.") + (train ? "path" : "eval_path") +
                              " is required for data.source=file");
        ds = load_dataset(path);
    }

    if (want > ds.size())
        throw ConfigError("data." + std::string(train ? "train_n" : "eval_n") + "=" +
                          std::to_string(want) + " exceeds the " + std::to_string(ds.size()) +
                          " available samples");
    if (want < ds.size()) ds = subset(ds, want, seed);
    ds.split = split;
    return ds;
}

}  // namespace protoshield
