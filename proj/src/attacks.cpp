#include "protoshield/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "protoshield/rng.hpp"
#include "protoshield/serialize.hpp"

namespace protoshield {

AttackKind attack_kind_from_name(const std::string& name) {
    if (name == "fgsm") return AttackKind::fgsm;
    if (name == "bim") return AttackKind::bim;
    if (name == "mim") return AttackKind::mim;
    if (name == "cw") return AttackKind::cw;
    if (name == "pgd") return AttackKind::pgd;
    throw ConfigError("unknown attack kind '" + name + "'");
}

const char* attack_kind_name(AttackKind k) {
    switch (k) {
        case AttackKind::fgsm: return "fgsm";
        case AttackKind::bim: return "bim";
        case AttackKind::mim: return "mim";
        case AttackKind::cw: return "cw";
        case AttackKind::pgd: return "pgd";
    }
    return "?";
}

void AttackConfig::validate() const {
    if (epsilon < 0) throw ConfigError("attack: epsilon must be >= 0");
    if (steps < 1) throw ConfigError("attack: steps must be >= 1");
    if (!(clip_min < clip_max)) throw ConfigError("attack: clip_min must be < clip_max");
    if (decay < 0) throw ConfigError("attack: decay must be >= 0");
    if (kind == AttackKind::cw && (iters < 1 || lr <= 0))
        throw ConfigError("attack: cw needs iters >= 1 and lr > 0");
    if (restarts < 1) throw ConfigError("attack: restarts must be >= 1");
}

namespace {

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// d(loss)/dx with parameters frozen by the caller; loss per cfg.loss_mode.
std::vector<double> input_grad(const Model& m, const std::vector<PrototypeSet>& protos,
                               const Tensor& x_cur, const std::vector<int>& labels, LossMode mode) {
    Tensor x = x_cur.clone();
    x.set_requires_grad(true);
    Tape tape;
    auto out = m.forward(x, &tape);
    Tensor loss;
    if (mode == LossMode::ce) {
        loss = cross_entropy(out.logits, labels, &tape);
    } else {
        if (protos.size() != out.taps.size())
            throw ConfigError("attack: joint loss mode needs one prototype set per tap (got " +
                              std::to_string(protos.size()) + " for " +
                              std::to_string(out.taps.size()) + " taps)");
        loss = joint_loss(out.logits, out.taps, labels, protos, {}, &tape).total;
    }
    tape.backward(loss);
    return std::move(x.grad());
}

Tensor attack_fgsm(const Model& m, const std::vector<PrototypeSet>& protos, const Tensor& x,
                   const std::vector<int>& labels, const AttackConfig& cfg) {
    std::vector<double> g = input_grad(m, protos, x, labels, cfg.loss_mode);
    Tensor adv = x.clone();
    double* a = adv.data();
    for (int64_t i = 0; i < adv.numel(); ++i)
        a[i] = std::clamp(a[i] + cfg.epsilon * sgn(g[i]), cfg.clip_min, cfg.clip_max);
    return adv;
}

// Shared iterative loop; with_momentum selects the accumulated direction of
// mim versus the raw gradient sign of bim. The two coincide bitwise at mu=0
// because the per-sample l1 normalization never flips a gradient's sign.
Tensor attack_iterative(const Model& m, const std::vector<PrototypeSet>& protos, const Tensor& x,
                        const std::vector<int>& labels, const AttackConfig& cfg, bool with_momentum) {
    int64_t n = x.dim(0), row = x.numel() / n;
    double alpha = cfg.step_size > 0 ? cfg.step_size : cfg.epsilon / cfg.steps;
    const double* x0 = x.data();
    Tensor adv = x.clone();
    double* a = adv.data();
    std::vector<double> momentum;
    if (with_momentum) momentum.assign(x.numel(), 0.0);
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<double> g = input_grad(m, protos, adv, labels, cfg.loss_mode);
        if (with_momentum) {
            for (int64_t i = 0; i < n; ++i) {
                double l1 = 0;
                for (int64_t j = 0; j < row; ++j) l1 += std::fabs(g[i * row + j]);
                for (int64_t j = 0; j < row; ++j) {
                    double unit = l1 > 0 ? g[i * row + j] / l1 : 0.0;
                    momentum[i * row + j] = cfg.decay * momentum[i * row + j] + unit;
                }
            }
        }
        const std::vector<double>& dir = with_momentum ? momentum : g;
        for (int64_t i = 0; i < x.numel(); ++i) {
            double v = a[i] + alpha * sgn(dir[i]);
            v = std::clamp(v, x0[i] - cfg.epsilon, x0[i] + cfg.epsilon);
            a[i] = std::clamp(v, cfg.clip_min, cfg.clip_max);
        }
    }
    return adv;
}

Tensor attack_pgd(const Model& m, const std::vector<PrototypeSet>& protos, const Tensor& x,
                  const std::vector<int>& labels, const AttackConfig& cfg, uint64_t salt) {
    int64_t n = x.dim(0), row = x.numel() / n;
    double gamma = cfg.step_size > 0 ? cfg.step_size : cfg.epsilon / cfg.steps;
    const double* x0 = x.data();
    Tensor best = x.clone();
    std::vector<uint8_t> done(n, 0);
    for (int r = 0; r < cfg.restarts; ++r) {
        Rng rng(cfg.seed, Stream::attack, salt * 1000003ULL + uint64_t(r));
        Tensor adv = x.clone();
        double* a = adv.data();
        for (int64_t i = 0; i < adv.numel(); ++i)
            a[i] = std::clamp(a[i] + rng.uniform(-cfg.epsilon, cfg.epsilon), cfg.clip_min,
                              cfg.clip_max);
        for (int step = 0; step < cfg.steps; ++step) {
            std::vector<double> g = input_grad(m, protos, adv, labels, cfg.loss_mode);
            for (int64_t i = 0; i < adv.numel(); ++i) {
                // Projection is onto the ball around the original input.
                double v = a[i] + gamma * sgn(g[i]);
                v = std::clamp(v, x0[i] - cfg.epsilon, x0[i] + cfg.epsilon);
                a[i] = std::clamp(v, cfg.clip_min, cfg.clip_max);
            }
        }
        if (cfg.restarts == 1) return adv;
        std::vector<int> pred = predict_softmax(m, adv);
        double* b = best.data();
        for (int64_t i = 0; i < n; ++i) {
            bool hit = pred[i] != labels[i];
            if ((r == 0 || hit) && !done[i]) {
                std::memcpy(b + i * row, a + i * row, sizeof(double) * row);
                done[i] = hit;
            }
        }
    }
    return best;
}

Tensor attack_cw(const Model& m, const Tensor& x, const std::vector<int>& labels,
                 const AttackConfig& cfg) {
    int64_t n = x.dim(0), row = x.numel() / n;
    double lo = cfg.clip_min, hi = cfg.clip_max, span = hi - lo;
    // Change of variables keeps candidates strictly inside the pixel range;
    // boundary pixels are nudged inward before arctanh.
    std::vector<double> z0(x.numel());
    const double* xd = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        double v = std::clamp(xd[i], lo + 1e-6, hi - 1e-6);
        z0[i] = std::atanh(2.0 * (v - lo) / span - 1.0);
    }
    Tensor zeta = Tensor::from_vec(x.shape(), std::move(z0), true);
    Tensor x_ref = x.clone();

    Tensor best = x.clone();
    std::vector<double> best_d2(n, std::numeric_limits<double>::infinity());
    Tensor last;
    auto consider = [&](const Tensor& cand) {
        std::vector<int> pred = predict_softmax(m, cand);
        const double* cd = cand.data();
        double* bd = best.data();
        for (int64_t i = 0; i < n; ++i) {
            if (pred[i] == labels[i]) continue;
            double d2 = 0;
            for (int64_t j = 0; j < row; ++j) {
                double dlt = cd[i * row + j] - xd[i * row + j];
                d2 += dlt * dlt;
            }
            if (d2 < best_d2[i]) {
                best_d2[i] = d2;
                std::memcpy(bd + i * row, cd + i * row, sizeof(double) * row);
            }
        }
    };

    for (int it = 0; it <= cfg.iters; ++it) {
        Tape tape;
        Tensor xp = add_scalar(mul_scalar(tanh_op(zeta, &tape), span / 2.0, &tape), lo + span / 2.0,
                               &tape);
        consider(xp);
        if (it == cfg.iters) {
            last = xp;
            break;
        }
        Tensor diff = sub(xp, x_ref, &tape);
        Tensor dist = sum(mul(diff, diff, &tape), &tape);
        Tensor margins = cw_margin(m.forward(xp, &tape).logits, labels, cfg.kappa, &tape);
        Tensor loss = add(dist, mul_scalar(sum(margins, &tape), cfg.c, &tape), &tape);
        tape.backward(loss);
        double* zd = zeta.data();
        const std::vector<double>& zg = zeta.grad();
        for (int64_t i = 0; i < zeta.numel(); ++i) zd[i] -= cfg.lr * zg[i];
        zeta.zero_grad();
    }

    // Samples with no adversarial candidate keep the final iterate.
    double* bd = best.data();
    const double* ld = last.data();
    for (int64_t i = 0; i < n; ++i)
        if (std::isinf(best_d2[i])) std::memcpy(bd + i * row, ld + i * row, sizeof(double) * row);
    return best;
}

}  // namespace

AdvBatch run_attack(const Model& model, const std::vector<PrototypeSet>& protos, const Tensor& x,
                    const std::vector<int>& labels, const AttackConfig& cfg, uint64_t salt) {
    cfg.validate();
    if (x.dim(0) != int64_t(labels.size()))
        throw ConfigError("run_attack: " + std::to_string(labels.size()) + " labels for batch " +
                          x.shape_str());
    std::vector<Tensor> frozen = model.parameters();
    for (const PrototypeSet& p : protos) frozen.push_back(p.centroids);
    ParamFreeze freeze(std::move(frozen));

    AdvBatch b;
    b.x = x;
    b.labels = labels;
    switch (cfg.kind) {
        case AttackKind::fgsm:
            b.x_adv = attack_fgsm(model, protos, x, labels, cfg);
            break;
        case AttackKind::bim:
            b.x_adv = attack_iterative(model, protos, x, labels, cfg, false);
            break;
        case AttackKind::mim:
            b.x_adv = attack_iterative(model, protos, x, labels, cfg, true);
            break;
        case AttackKind::cw:
            b.x_adv = attack_cw(model, x, labels, cfg);
            break;
        case AttackKind::pgd:
            b.x_adv = attack_pgd(model, protos, x, labels, cfg, salt);
            break;
    }

    int64_t n = x.dim(0), row = x.numel() / n;
    const double* xd = x.data();
    const double* ad = b.x_adv.data();
    b.linf.resize(n);
    bool linf_bounded = cfg.kind != AttackKind::cw;
    for (int64_t i = 0; i < n; ++i) {
        double mx = 0;
        for (int64_t j = 0; j < row; ++j) {
            double v = ad[i * row + j];
            if (v < cfg.clip_min || v > cfg.clip_max)
                throw std::runtime_error("run_attack: pixel outside valid range");
            mx = std::max(mx, std::fabs(v - xd[i * row + j]));
        }
        if (linf_bounded && mx > cfg.epsilon + 1e-9)
            throw std::runtime_error("run_attack: perturbation exceeds epsilon budget");
        b.linf[i] = mx;
    }

    b.clean_pred = predict_softmax(model, x);
    b.adv_pred = predict_softmax(model, b.x_adv);
    b.success.resize(n);
    for (int64_t i = 0; i < n; ++i) b.success[i] = b.adv_pred[i] != labels[i];
    return b;
}

AdvBatch attack_dataset(const Model& model, const std::vector<PrototypeSet>& protos,
                        const Dataset& ds, const AttackConfig& cfg, int64_t batch_size) {
    AdvBatch all;
    std::vector<Tensor> xs, advs;
    for (int64_t at = 0; at < ds.size(); at += batch_size) {
        int64_t cnt = std::min(batch_size, ds.size() - at);
        std::vector<int64_t> rows(cnt);
        std::iota(rows.begin(), rows.end(), at);
        Tensor xb = take_rows(ds.images, rows);
        std::vector<int> yb(ds.labels.begin() + at, ds.labels.begin() + at + cnt);
        AdvBatch b = run_attack(model, protos, xb, yb, cfg, uint64_t(at / batch_size));
        xs.push_back(b.x);
        advs.push_back(b.x_adv);
        all.labels.insert(all.labels.end(), b.labels.begin(), b.labels.end());
        all.clean_pred.insert(all.clean_pred.end(), b.clean_pred.begin(), b.clean_pred.end());
        all.adv_pred.insert(all.adv_pred.end(), b.adv_pred.begin(), b.adv_pred.end());
        all.success.insert(all.success.end(), b.success.begin(), b.success.end());
        all.linf.insert(all.linf.end(), b.linf.begin(), b.linf.end());
    }
    all.x = concat0(xs);
    all.x_adv = concat0(advs);
    return all;
}

void rescore(AdvBatch& batch, const Model& target) {
    batch.clean_pred = predict_softmax(target, batch.x);
    batch.adv_pred = predict_softmax(target, batch.x_adv);
    for (size_t i = 0; i < batch.success.size(); ++i)
        batch.success[i] = batch.adv_pred[i] != batch.labels[i];
}

void save_adv_batch(const std::string& base_path, const AdvBatch& batch,
                    const std::string& header_line) {
    nlohmann::json j;
    j["kind"] = "advbatch";
    j["n"] = batch.labels.size();
    Tensor labels = Tensor::zeros({int64_t(batch.labels.size())});
    for (size_t i = 0; i < batch.labels.size(); ++i) labels.data()[i] = batch.labels[i];
    write_container(base_path + ".bin", j.dump(), {batch.x, batch.x_adv, labels});

    std::ofstream os(base_path + ".csv");
    if (!os) throw std::runtime_error("cannot write " + base_path + ".csv");
    os << header_line << "\n";
    os << "index,label,clean_pred,adv_pred,linf\n";
    for (size_t i = 0; i < batch.labels.size(); ++i)
        os << i << ',' << batch.labels[i] << ',' << batch.clean_pred[i] << ',' << batch.adv_pred[i]
           << ',' << batch.linf[i] << "\n";
}

}  // namespace protoshield
