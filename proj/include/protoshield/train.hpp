#pragma once

#include <string>
#include <vector>

#include "protoshield/attacks.hpp"
#include "protoshield/data.hpp"
#include "protoshield/model.hpp"

namespace protoshield {

struct LrSchedule {
    double base = 0.1;
    std::vector<int> decay_epochs;
    double decay_factor = 0.1;

    double at(int epoch) const {
        double lr = base;
        for (int e : decay_epochs)
            if (epoch >= e) lr *= decay_factor;
        return lr;
    }
};

enum class AdvMode { none, fgsm, pgd };

struct TrainConfig {
    int epochs = 30;
    int warmup = 5;  // cross-entropy-only phase length
    int batch_size = 128;
    LrSchedule lr;
    AdvMode adv_mode = AdvMode::none;
    double adv_eps_lo = 0.1, adv_eps_hi = 0.5;
    int adv_steps = 10;  // pgd steps inside training, step size eps/steps
    bool adv_joint_loss = true;  // joint-phase attacks differentiate the full objective
    std::vector<double> pc_weights;  // per-tap; empty = unit weights
    uint64_t seed = 0;
    int checkpoint_every = 0;  // epochs; 0 = no periodic checkpoints
    std::string checkpoint_dir;
    bool verbose = false;

    void validate(int num_taps) const;
};

struct EpochRecord {
    int epoch = 0;
    std::string phase;  // "warmup" or "joint"
    double lr = 0;
    double loss_total = 0, loss_ce = 0, loss_pc = 0;  // epoch means
    double clean_acc = 0;                             // training-set accuracy
    double proto_min_dist = 0, proto_mean_dist = 0;   // deepest-tap centroids
    double seconds = 0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
};

struct TrainResult {
    Model model;
    std::vector<PrototypeSet> protos;
    TrainLog log;
};

// p <- p - lr * grad for every tensor that has a populated gradient.
void sgd_step(std::vector<Tensor>& params, double lr);

// Warm-up epochs minimize cross-entropy alone; joint epochs add the
// prototype terms at every tap and update centroids in the same step. With
// adv_mode set, each joint-phase batch is doubled with attacked copies
// generated against the current parameters, epsilon drawn per batch.
TrainResult train(const ModelSpec& spec, const Dataset& data, const TrainConfig& cfg);

// Independent cross-entropy model of a different architecture, used as the
// black-box gradient source.
Model make_black_box_source(const Dataset& data, uint64_t seed, int epochs = 4);

void write_train_log(const std::string& path, const TrainLog& log, const std::string& header_line);

// Centroid export for inspection, one row per (tap, class, dim, value).
void write_prototype_csv(const std::string& path, const std::vector<PrototypeSet>& protos,
                         const std::string& header_line);

}  // namespace protoshield
