#include "protoshield/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "protoshield/rng.hpp"

namespace protoshield {

void TrainConfig::validate(int num_taps) const {
    if (epochs < 0 || warmup < 0 || warmup > epochs)
        throw ConfigError("train: need 0 <= warmup <= epochs");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (adv_eps_lo > adv_eps_hi || adv_eps_lo < 0)
        throw ConfigError("train: need 0 <= adv_eps_lo <= adv_eps_hi");
    if (!pc_weights.empty() && int(pc_weights.size()) != num_taps)
        throw ConfigError("train: pc_weights count " + std::to_string(pc_weights.size()) +
                          " does not match tap count " + std::to_string(num_taps));
}

void sgd_step(std::vector<Tensor>& params, double lr) {
    for (Tensor& p : params) {
        if (!p.has_grad()) continue;
        double* d = p.data();
        const std::vector<double>& g = p.grad();
        if (g.size() != size_t(p.numel()))
            throw UsageError("sgd_step: gradient length mismatch for " + p.shape_str());
        for (int64_t i = 0; i < p.numel(); ++i) d[i] -= lr * g[i];
    }
}

namespace {

struct ProtoStats {
    double min_dist = 0, mean_dist = 0;
};

ProtoStats centroid_stats(const PrototypeSet& set) {
    const Tensor& w = set.centroids;
    int64_t k = w.dim(0), d = w.dim(1);
    ProtoStats s;
    s.min_dist = std::numeric_limits<double>::infinity();
    double acc = 0;
    int64_t pairs = 0;
    for (int64_t i = 0; i < k; ++i)
        for (int64_t j = i + 1; j < k; ++j) {
            double ss = 0;
            for (int64_t t = 0; t < d; ++t) {
                double diff = w.data()[i * d + t] - w.data()[j * d + t];
                ss += diff * diff;
            }
            double dist = std::sqrt(ss);
            s.min_dist = std::min(s.min_dist, dist);
            acc += dist;
            ++pairs;
        }
    s.mean_dist = pairs ? acc / double(pairs) : 0.0;
    return s;
}

}  // namespace

TrainResult train(const ModelSpec& spec, const Dataset& data, const TrainConfig& cfg) {
    spec.validate();
    cfg.validate(int(spec.taps.size()));
    if (data.size() == 0) throw ConfigError("train: empty dataset");
    if (data.num_classes != spec.num_classes)
        throw ConfigError("train: dataset has " + std::to_string(data.num_classes) +
                          " classes, spec expects " + std::to_string(spec.num_classes));

    TrainResult res;
    res.model = build_model(spec, cfg.seed);
    std::vector<int64_t> tap_dims = spec.tap_dims();
    {
        Rng proto_rng(cfg.seed, Stream::protos);
        for (int64_t d : tap_dims)
            res.protos.push_back(make_prototypes(spec.num_classes, d, proto_rng));
    }

    std::vector<Tensor> theta = res.model.parameters();
    std::vector<Tensor> all = theta;
    for (PrototypeSet& p : res.protos) all.push_back(p.centroids);

    int64_t n = data.size();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        bool joint = epoch >= cfg.warmup;
        double lr = cfg.lr.at(epoch);
        Rng adv_rng(cfg.seed, Stream::advgen, uint64_t(epoch));
        auto batches = make_batches(n, cfg.batch_size, true, cfg.seed, uint64_t(epoch));

        double sum_total = 0, sum_ce = 0, sum_pc = 0;
        int64_t correct = 0, seen = 0;
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            Tensor xb = take_rows(data.images, batches[bi]);
            std::vector<int> yb(batches[bi].size());
            for (size_t i = 0; i < batches[bi].size(); ++i) yb[i] = data.labels[batches[bi][i]];

            if (joint && cfg.adv_mode != AdvMode::none) {
                // Online augmentation against the current parameters.
                AttackConfig acfg;
                acfg.kind = cfg.adv_mode == AdvMode::fgsm ? AttackKind::fgsm : AttackKind::pgd;
                acfg.epsilon = adv_rng.uniform(cfg.adv_eps_lo, cfg.adv_eps_hi);
                acfg.steps = cfg.adv_steps;
                acfg.loss_mode = cfg.adv_joint_loss ? LossMode::joint : LossMode::ce;
                acfg.seed = adv_rng.next_u64();
                AdvBatch adv = run_attack(res.model, res.protos, xb, yb, acfg, bi);
                xb = concat0({xb, adv.x_adv});
                yb.insert(yb.end(), adv.labels.begin(), adv.labels.end());
            }

            Tape tape;
            auto out = res.model.forward(xb, &tape);
            Tensor loss;
            double ce_v = 0, pc_v = 0;
            if (joint) {
                LossBreakdown lb =
                    joint_loss(out.logits, out.taps, yb, res.protos, cfg.pc_weights, &tape);
                loss = lb.total;
                ce_v = lb.ce.item();
                for (const Tensor& pc : lb.pc_per_tap) pc_v += pc.item();
            } else {
                loss = cross_entropy(out.logits, yb, &tape);
                ce_v = loss.item();
            }
            double total_v = loss.item();
            if (!std::isfinite(total_v))
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " + std::to_string(bi));

            tape.backward(loss);
            if (joint)
                sgd_step(all, lr);
            else
                sgd_step(theta, lr);
            for (Tensor& p : all) p.zero_grad();

            int64_t bn = xb.dim(0);
            sum_total += total_v * double(bn);
            sum_ce += ce_v * double(bn);
            sum_pc += pc_v * double(bn);
            const std::vector<int> pred = predict_argmax(out.logits);
            for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == yb[i];
            seen += bn;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.phase = joint ? "joint" : "warmup";
        rec.lr = lr;
        rec.loss_total = sum_total / double(seen);
        rec.loss_ce = sum_ce / double(seen);
        rec.loss_pc = sum_pc / double(seen);
        rec.clean_acc = double(correct) / double(seen);
        if (!res.protos.empty()) {
            ProtoStats ps = centroid_stats(res.protos.back());
            rec.proto_min_dist = ps.min_dist;
            rec.proto_mean_dist = ps.mean_dist;
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.epochs.push_back(rec);
        if (cfg.verbose)
            std::printf("epoch %3d %-6s lr %.4f loss %.4f ce %.4f pc %.4f acc %.4f (%.1fs)\n",
                        epoch, rec.phase.c_str(), lr, rec.loss_total, rec.loss_ce, rec.loss_pc,
                        rec.clean_acc, rec.seconds);

        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
            (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) {
            std::filesystem::create_directories(cfg.checkpoint_dir);
            save_checkpoint(cfg.checkpoint_dir + "/epoch_" + std::to_string(epoch + 1) + ".ckpt",
                            res.model, res.protos, {cfg.seed, "", ""});
        }
    }
    return res;
}

Model make_black_box_source(const Dataset& data, uint64_t seed, int epochs) {
    ModelSpec spec = ModelSpec::source_net(data.num_classes, {data.images.dim(1),
                                                              data.images.dim(2),
                                                              data.images.dim(3)});
    TrainConfig cfg;
    cfg.batch_size = 32;
    // Small datasets yield few steps per epoch; floor the total step count so
    // the source model converges regardless of dataset size.
    int64_t steps_per_epoch = (int64_t(data.size()) + cfg.batch_size - 1) / cfg.batch_size;
    cfg.epochs = std::max<int>(epochs, int((200 + steps_per_epoch - 1) / steps_per_epoch));
    cfg.warmup = cfg.epochs;  // cross-entropy only
    cfg.lr.base = 0.02;
    cfg.seed = seed;
    return train(spec, data, cfg).model;
}

void write_train_log(const std::string& path, const TrainLog& log, const std::string& header_line) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << header_line << "\n";
    os << "epoch,phase,lr,loss_total,loss_ce,loss_pc,clean_acc,proto_min_dist,proto_mean_dist,"
          "seconds\n";
    for (const EpochRecord& r : log.epochs)
        os << r.epoch << ',' << r.phase << ',' << r.lr << ',' << r.loss_total << ',' << r.loss_ce
           << ',' << r.loss_pc << ',' << r.clean_acc << ',' << r.proto_min_dist << ','
           << r.proto_mean_dist << ',' << r.seconds << "\n";
}

void write_prototype_csv(const std::string& path, const std::vector<PrototypeSet>& protos,
                         const std::string& header_line) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    os << header_line << "\n";
    os << "tap,class,dim,value\n";
    char buf[96];
    for (size_t tap = 0; tap < protos.size(); ++tap) {
        const Tensor& w = protos[tap].centroids;
        for (int64_t cls = 0; cls < w.dim(0); ++cls)
            for (int64_t d = 0; d < w.dim(1); ++d) {
                std::snprintf(buf, sizeof(buf), "%zu,%lld,%lld,%.17g", tap,
                              static_cast<long long>(cls), static_cast<long long>(d),
                              w.data()[cls * w.dim(1) + d]);
                os << buf << "\n";
            }
    }
}

}  // namespace protoshield
