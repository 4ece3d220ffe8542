#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoshield/data.hpp"
#include "protoshield/model.hpp"

namespace protoshield {

enum class AttackKind { fgsm, bim, mim, cw, pgd };

AttackKind attack_kind_from_name(const std::string& name);
const char* attack_kind_name(AttackKind k);

// Gradient source for the attack: plain classification loss, or the full
// training objective including the prototype terms (adaptive setting).
enum class LossMode { ce, joint };

struct AttackConfig {
    AttackKind kind = AttackKind::fgsm;
    double epsilon = 0.3;
    int steps = 10;
    double step_size = 0.0;  // 0 -> epsilon / steps
    double decay = 1.0;      // momentum mu (mim)
    double c = 1.0;          // objective trade-off (cw)
    double kappa = 0.0;      // confidence margin (cw)
    double lr = 0.01;        // optimizer rate (cw)
    int iters = 1000;        // optimizer steps (cw)
    LossMode loss_mode = LossMode::ce;
    double clip_min = 0.0, clip_max = 1.0;
    int restarts = 1;  // pgd random starts
    uint64_t seed = 0;

    void validate() const;
};

struct AdvBatch {
    Tensor x;      // originals
    Tensor x_adv;  // perturbed copies, same shape
    std::vector<int> labels;
    std::vector<int> clean_pred, adv_pred;
    std::vector<uint8_t> success;  // adv_pred != label
    std::vector<double> linf;      // per-sample max |x_adv - x|
};

// Runs one attack on a batch. Model parameters and prototypes are frozen for
// the duration; gradients flow only into the input copy. Deterministic given
// cfg.seed and `salt` (used to decorrelate batches within one evaluation).
AdvBatch run_attack(const Model& model, const std::vector<PrototypeSet>& protos, const Tensor& x,
                    const std::vector<int>& labels, const AttackConfig& cfg, uint64_t salt = 0);

// Streams a dataset through run_attack in batches and concatenates results.
AdvBatch attack_dataset(const Model& model, const std::vector<PrototypeSet>& protos,
                        const Dataset& ds, const AttackConfig& cfg, int64_t batch_size);

// Evaluates the batch on a (possibly different) model, refreshing clean_pred,
// adv_pred and success flags; used for black-box and transfer settings.
void rescore(AdvBatch& batch, const Model& target);

void save_adv_batch(const std::string& base_path, const AdvBatch& batch,
                    const std::string& header_line);

}  // namespace protoshield
