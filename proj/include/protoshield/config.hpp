#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoshield/attacks.hpp"
#include "protoshield/data.hpp"
#include "protoshield/eval.hpp"
#include "protoshield/model.hpp"
#include "protoshield/train.hpp"

namespace protoshield {

// One run = one config file plus flag overrides (flags win). Every key is
// validated before any compute; unknown keys are rejected with their dotted
// path so typos fail loudly instead of silently using defaults.

struct DataConfig {
    // digits: stroke-rendered digit images, or real IDX files when dir (or
    //         $PROTOSHIELD_MNIST_DIR) points at the standard four files.
    // blobs:  gaussian class blobs, the fast smoke dataset.
    // idx:    explicit IDX image/label paths per split.
    // file:   datasets serialized by save_dataset.
    std::string source = "digits";
    std::string dir;
    std::string images, labels;            // idx train pair
    std::string eval_images, eval_labels;  // idx eval pair
    std::string path, eval_path;           // file source per split
    int64_t train_n = 10000;
    int64_t eval_n = 1000;
    int classes = 10;
    double blob_spread = 0.08;
};

struct EvalConfig {
    std::vector<std::string> attacks = {"fgsm", "bim", "mim", "cw", "pgd"};
    std::string setting = "white";
    bool prototype_pred = false;
    std::vector<double> sweep_grid = {0.0, 0.05, 0.1, 0.2, 0.3, 0.45, 0.6};
    std::vector<std::string> sweep_kinds = {"fgsm", "bim", "pgd"};
    double probe_eps = 0.1;
    int probe_draws = 200;
    int probe_samples = 64;
    double high_eps = 0.6;  // masking checklist collapse point
    int64_t batch_size = 256;
};

struct RunConfig {
    uint64_t seed = 1;
    std::string output_dir = "runs/latest";
    // ce-only | pcl | pcl-advfgsm | pcl-advpgd
    std::string variant = "pcl";
    std::string model = "cnn6-tiny";
    DataConfig data;
    TrainConfig train;
    AttackConfig attack;
    EvalConfig eval;
};

// Parses and validates a JSON config file. Missing keys keep defaults.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);

// Canonical JSON for hashing and provenance; round-trips through parse.
std::string run_config_json(const RunConfig& cfg);

// FNV-1a over the canonical JSON; stamped into every output header.
uint64_t fnv1a64(const std::string& text);
uint64_t config_hash(const RunConfig& cfg);

// Output root: $PROTOSHIELD_OUT prefixes relative output dirs when set.
std::string resolve_output_dir(const RunConfig& cfg);

// Model spec for the configured profile and class count.
ModelSpec spec_for(const RunConfig& cfg);

// TrainConfig with the variant folded in: ce-only never leaves warm-up,
// pcl-adv* select the training attack.
TrainConfig train_config_for(const RunConfig& cfg);

// Base attack knobs from the config with the kind swapped in.
AttackConfig attack_config_for(const RunConfig& cfg, const std::string& kind_name);

// Loads the requested split ("train" or "eval") per the data section.
Dataset load_split(const RunConfig& cfg, const std::string& split);

}  // namespace protoshield
