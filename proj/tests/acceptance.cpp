// Acceptance gates for the workbench. Each gate prints one PASS/FAIL line
// with its runtime and a short detail; the process exits nonzero if any gate
// fails. argv[1] must point at the command-line binary, which the pipeline
// and determinism gates drive end to end.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "fd_check.hpp"
#include "protoshield/attacks.hpp"
#include "protoshield/config.hpp"
#include "protoshield/data.hpp"
#include "protoshield/eval.hpp"
#include "protoshield/losses.hpp"
#include "protoshield/model.hpp"
#include "protoshield/train.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace protoshield;

namespace {

// Gradient checks.
constexpr double kFdStep = 1e-4;
constexpr double kFdRelTol = 1e-4;
constexpr int kFdSeeds = 10;
constexpr double kFdBudgetSeconds = 60.0;

// Attack contracts. The budget slack absorbs one rounding step of
// (x + eps) - x; perturbations are otherwise exact.
constexpr int kAttackSamples = 1000;
constexpr double kAttackEps = 0.3;
constexpr double kEpsSlack = 1e-9;
constexpr int kAttackSteps = 7;
constexpr int kContractCwIters = 15;
constexpr double kAttackBudgetSeconds = 300.0;

// Robustness trends: three independent seeds, majority rule.
const std::vector<uint64_t> kSeeds = {1, 2, 3};
constexpr int64_t kTrainN = 10000, kEvalN = 1000;
constexpr int kCeEpochs = 3;
constexpr int kPclEpochs = 6, kPclWarmup = 2;
constexpr int kAdvEpochs = 4, kAdvWarmup = 1, kAdvSteps = 5;
constexpr double kPgdEps = 0.3;
constexpr int kEvalPgdSteps = 20;
constexpr double kCeCollapseMax = 0.10;
constexpr double kConformityGainMin = 0.10;
constexpr double kTrendBudgetSeconds = 2700.0;

// Masking diagnostics on the trained defended model.
constexpr int kEvalSteps = 10;
constexpr int kEvalCwIters = 40;
constexpr double kSweepTol = 0.02;
constexpr double kHighEps = 0.6;
constexpr double kHighEpsCeiling = 0.05;
constexpr double kBlackTol = 0.0;
const std::vector<double> kSweepGrid = {0.0, 0.1, 0.2, 0.3, 0.45, 0.6};

// Feature-margin probe.
constexpr double kProbeEps = 0.1;
constexpr int kProbeDraws = 200;
constexpr int kProbeSamples = 64;

// Tap ablation, trained on a reduced split to bound runtime.
constexpr int64_t kAblTrainN = 4000;
constexpr int kAblEpochs = 4, kAblWarmup = 1;

// End-to-end pipeline.
constexpr double kReproBudgetSeconds = 300.0;

std::string g_cli;
std::string g_scratch;
bool g_all_pass = true;

struct Checker {
    std::string fails;
    std::string info;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            if (!fails.empty()) fails += "; ";
            fails += what;
        }
    }
    void note(const std::string& text) {
        if (!info.empty()) info += "; ";
        info += text;
    }
};

template <typename F>
void gate(const std::string& name, F&& body) {
    auto t0 = std::chrono::steady_clock::now();
    Checker c;
    try {
        body(c);
    } catch (const std::exception& e) {
        c.require(false, std::string("unhandled exception: ") + e.what());
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = c.fails.empty();
    g_all_pass = g_all_pass && pass;
    std::string detail = pass ? c.info : c.fails;
    std::printf("%s %s (%.1fs)%s%s\n", pass ? "PASS" : "FAIL", name.c_str(), secs,
                detail.empty() ? "" : " ", detail.c_str());
    std::fflush(stdout);
}

int run_cli(const std::string& args, const std::string& log_name) {
    std::string cmd = g_cli + " " + args + " >" + g_scratch + "/" + log_name + " 2>&1";
    int rc = std::system(cmd.c_str());
    if (rc == -1) return -1;
    if (WIFEXITED(rc)) return WEXITSTATUS(rc);
    return -2;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Gradient correctness.

void check_fd(Checker& c, double& worst, std::string& where, const std::string& label,
              const std::vector<Tensor>& leaves,
              const std::function<Tensor(Tape*)>& f) {
    fdcheck::FdReport rep = fdcheck::fd_gradients(leaves, f, kFdStep);
    if (rep.max_rel > worst) {
        worst = rep.max_rel;
        where = label + " (" + rep.worst + ")";
    }
    c.require(rep.max_rel <= kFdRelTol,
              label + " rel err " + std::to_string(rep.max_rel));
}

Tensor project(Tensor y, Tensor r, Tape* tape) { return sum(mul(y, r, tape), tape); }

void gate_gradients(Checker& c) {
    double worst = 0.0;
    std::string where = "-";
    int64_t graphs = 0;
    for (int si = 0; si < kFdSeeds; ++si) {
        uint64_t seed = 101 + static_cast<uint64_t>(si);
        Rng rng(seed);
        auto rt = [&rng](std::vector<int64_t> shape, double lo, double hi, bool grad) {
            return testutil::rand_tensor(std::move(shape), rng, lo, hi, grad);
        };

        {
            Tensor a = rt({3, 4}, -1, 1, true);
            Tensor b = rt({4, 2}, -1, 1, true);
            Tensor r = rt({3, 2}, 0.5, 1.5, false);
            check_fd(c, worst, where, "matmul+mean", {a, b}, [&](Tape* t) {
                return mean(mul(matmul(a, b, t), r, t), t);
            });
        }
        {
            Tensor x = rt({2, 6}, -1, 1, true);
            Tensor w = rt({3, 6}, -1, 1, true);
            Tensor b = rt({3}, -1, 1, true);
            Tensor r = rt({2, 3}, 0.5, 1.5, false);
            check_fd(c, worst, where, "linear", {x, w, b}, [&](Tape* t) {
                return project(linear(x, w, b, t), r, t);
            });
        }
        {
            Tensor x = rt({2, 2, 5, 5}, -1, 1, true);
            Tensor k = rt({3, 2, 3, 3}, -1, 1, true);
            Tensor b = rt({3}, -0.5, 0.5, true);
            Tensor r = rt({2, 3, 5, 5}, 0.5, 1.5, false);
            check_fd(c, worst, where, "conv+bias", {x, k, b}, [&](Tape* t) {
                return project(channel_bias(conv2d(x, k, 1, 1, t), b, t), r, t);
            });
        }
        {
            // Strided convolution into the pooling stack. Inputs resample
            // until every pre-activation clears the prelu kink and each
            // pooling window has a separated maximum; finite differences
            // would otherwise straddle a non-smooth point.
            Tensor slope = rt({1}, 0.1, 0.4, true);
            Tensor w = rt({3, 2}, -1, 1, true);
            Tensor b = rt({3}, -0.5, 0.5, true);
            Tensor r = rt({1, 3}, 0.5, 1.5, false);
            Tensor x, k;
            for (int attempt = 0; attempt < 64; ++attempt) {
                x = rt({1, 2, 8, 8}, -1, 1, true);
                k = rt({2, 2, 3, 3}, -1, 1, true);
                Tensor pre = conv2d(x, k, 2, 0);
                const double* pv = pre.data();
                double kink = std::numeric_limits<double>::infinity();
                for (int64_t i = 0; i < pre.numel(); ++i)
                    kink = std::min(kink, std::fabs(pv[i]));
                double sep = std::numeric_limits<double>::infinity();
                for (int64_t ch = 0; ch < pre.dim(1); ++ch) {
                    std::vector<double> window;
                    for (int dr = 0; dr < 2; ++dr)
                        for (int dq = 0; dq < 2; ++dq)
                            window.push_back(pv[(ch * pre.dim(2) + dr) * pre.dim(3) + dq]);
                    std::sort(window.begin(), window.end());
                    sep = std::min(sep, window[3] - window[2]);
                }
                if (kink > 0.02 && sep > 0.02) break;
            }
            check_fd(c, worst, where, "conv-pool-gap-softmax", {x, k, slope, w, b},
                     [&](Tape* t) {
                         Tensor y = conv2d(x, k, 2, 0, t);
                         y = prelu(y, slope, t);
                         y = max_pool2d(y, t);
                         y = global_avg_pool(y, t);
                         y = linear(y, w, b, t);
                         y = softmax(y, 1, t);
                         return project(y, r, t);
                     });
        }
        {
            Tensor x = rt({2, 5}, -1, 1, true);
            testutil::keep_away_from_zero(x, 0.05);
            Tensor r = rt({2, 5}, 0.5, 1.5, false);
            check_fd(c, worst, where, "relu", {x}, [&](Tape* t) {
                return project(relu(x, t), r, t);
            });
            check_fd(c, worst, where, "tanh-exp-log", {x}, [&](Tape* t) {
                Tensor y = log_op(add_scalar(exp_op(tanh_op(x, t), t), 0.5, t), t);
                return project(y, r, t);
            });
        }
        {
            Tensor a = rt({3, 3}, -1, 1, true);
            Tensor b = rt({3, 3}, -1, 1, true);
            Tensor r = rt({1, 9}, 0.5, 1.5, false);
            check_fd(c, worst, where, "arith-reshape", {a, b}, [&](Tape* t) {
                Tensor y = mul_scalar(add(a, b, t), 0.7, t);
                y = add_scalar(sub(y, mul(a, b, t), t), 0.3, t);
                return project(reshape(y, {1, 9}, t), r, t);
            });
        }
        {
            Tensor x = rt({6}, -1, 1, true);
            testutil::keep_away_from_zero(x, 0.05);
            check_fd(c, worst, where, "norm1", {x}, [&](Tape* t) { return norm_p(x, 1, t); });
            check_fd(c, worst, where, "norm2", {x}, [&](Tape* t) { return norm_p(x, 2, t); });
            Tensor y = x.clone();
            y.data()[2] = 2.0;  // unique, well separated maximum
            check_fd(c, worst, where, "norminf", {y},
                     [&](Tape* t) { return norm_p(y, std::numeric_limits<double>::infinity(), t); });
        }
        {
            Tensor logits = rt({4, 5}, -2, 2, true);
            std::vector<int> labels = {0, 3, 1, 4};
            check_fd(c, worst, where, "cross-entropy", {logits}, [&](Tape* t) {
                return cross_entropy(logits, labels, t);
            });
        }
        {
            // Features and centroids kept apart so every pairwise norm is
            // differentiable.
            Tensor f = rt({3, 4}, 1.5, 3.0, true);
            Tensor w = rt({3, 4}, -3.0, -1.5, true);
            std::vector<int> labels = {0, 2, 1};
            PrototypeSet protos{w};
            check_fd(c, worst, where, "prototype-conformity", {f, w}, [&](Tape* t) {
                return prototype_conformity(f, labels, protos, t);
            });
        }
        {
            Tensor logits = rt({3, 4}, -2, 2, true);
            Tensor tap0 = rt({3, 5}, 1.5, 3.0, true);
            Tensor tap1 = rt({3, 2}, 1.5, 3.0, true);
            Tensor w0 = rt({4, 5}, -3.0, -1.5, true);
            Tensor w1 = rt({4, 2}, -3.0, -1.5, true);
            std::vector<int> labels = {1, 0, 3};
            std::vector<PrototypeSet> protos = {{w0}, {w1}};
            check_fd(c, worst, where, "joint-loss", {logits, tap0, tap1, w0, w1},
                     [&](Tape* t) {
                         return joint_loss(logits, {tap0, tap1}, labels, protos, {}, t).total;
                     });
        }
        {
            // Margins pushed off the clamp corner and the argmax tie.
            Tensor logits = Tensor::from_vec(
                {2, 3}, {1.9, 0.4, -0.8, -1.2, 0.9, 2.3}, true);
            double* lv = logits.data();
            Rng jitter(seed ^ 0x9e37ULL);
            for (int64_t i = 0; i < logits.numel(); ++i) lv[i] += jitter.uniform(-0.05, 0.05);
            std::vector<int> labels = {0, 1};
            Tensor r = rt({2}, 0.5, 1.5, false);
            check_fd(c, worst, where, "cw-margin", {logits}, [&](Tape* t) {
                return project(cw_margin(logits, labels, 0.25, t), r, t);
            });
        }
        graphs += 13;
    }
    c.note("max rel err " + std::to_string(worst) + " at " + where + ", " +
           std::to_string(graphs) + " graphs");
}

// ---------------------------------------------------------------------------
// Attack contracts.

void gate_attacks(Checker& c) {
    auto t0 = std::chrono::steady_clock::now();
    ModelSpec spec = ModelSpec::by_name("cnn6-tiny", 10);
    Model model = build_model(spec, 3);
    Dataset ds = synth_digits(kAttackSamples, 11);
    std::vector<PrototypeSet> protos;

    auto cfg_for = [](AttackKind kind) {
        AttackConfig a;
        a.kind = kind;
        a.epsilon = kAttackEps;
        a.steps = kAttackSteps;
        a.iters = kContractCwIters;
        a.seed = 77;
        return a;
    };

    std::map<AttackKind, AdvBatch> results;
    for (AttackKind kind : {AttackKind::fgsm, AttackKind::bim, AttackKind::mim, AttackKind::cw,
                            AttackKind::pgd}) {
        AdvBatch b = attack_dataset(model, protos, ds, cfg_for(kind), 256);
        int64_t n = b.x_adv.numel();
        const double* adv = b.x_adv.data();
        int64_t range_bad = 0;
        for (int64_t i = 0; i < n; ++i)
            if (adv[i] < 0.0 || adv[i] > 1.0) ++range_bad;
        c.require(range_bad == 0, std::string(attack_kind_name(kind)) + ": " +
                                      std::to_string(range_bad) + " pixels out of range");
        if (kind != AttackKind::cw) {
            int64_t budget_bad = 0;
            for (double l : b.linf)
                if (l > kAttackEps + kEpsSlack) ++budget_bad;
            c.require(budget_bad == 0, std::string(attack_kind_name(kind)) + ": " +
                                           std::to_string(budget_bad) + " samples over budget");
        }
        results.emplace(kind, std::move(b));
    }

    AttackConfig mim0 = cfg_for(AttackKind::mim);
    mim0.decay = 0.0;
    AdvBatch mim_plain = attack_dataset(model, protos, ds, mim0, 256);
    c.require(testutil::bitwise_equal(mim_plain.x_adv, results.at(AttackKind::bim).x_adv),
              "zero-momentum mim differs from bim");

    AttackConfig fg0 = cfg_for(AttackKind::fgsm);
    fg0.epsilon = 0.0;
    AdvBatch identity = attack_dataset(model, protos, ds, fg0, 256);
    c.require(testutil::bitwise_equal(identity.x_adv, identity.x),
              "zero-epsilon fgsm is not the identity");

    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.require(secs < kAttackBudgetSeconds,
              "runtime " + fmt(secs) + "s over the " + fmt(kAttackBudgetSeconds) + "s budget");
    c.note(std::to_string(kAttackSamples) + " samples x 5 kinds within budget and range");
}

// ---------------------------------------------------------------------------
// Conformity closed forms.

void gate_closed_forms(Checker& c) {
    {
        Tensor f = Tensor::from_vec({1, 2}, {0.0, 0.0});
        Tensor w = Tensor::from_vec({2, 2}, {0.0, 0.0, 3.0, 4.0});
        double v = prototype_conformity(f, {0}, PrototypeSet{w}).item();
        c.require(v == -10.0, "on-centroid case: got " + std::to_string(v));
    }
    {
        Tensor f = Tensor::from_vec({1, 2}, {1.0, 0.0});
        Tensor w = Tensor::from_vec({2, 2}, {0.0, 0.0, 1.0, 0.0});
        double v = prototype_conformity(f, {0}, PrototypeSet{w}).item();
        c.require(v == 0.0, "cancellation case: got " + std::to_string(v));
    }
    c.note("both k=2 fixtures exact");
}

// ---------------------------------------------------------------------------
// Trend gates share trained models.

struct SeedRuns {
    Dataset train_ds, eval_ds;
    TrainResult ce, pcl, adv;
    double acc_ce = 1.0, acc_pcl = 0.0, acc_adv = 0.0;  // pgd accuracy
};

std::map<uint64_t, SeedRuns> g_runs;

RunConfig trend_config(uint64_t seed) {
    RunConfig rc;
    rc.model = "cnn6-tiny";
    rc.seed = seed;
    rc.data.source = "digits";
    rc.data.train_n = kTrainN;
    rc.data.eval_n = kEvalN;
    return rc;
}

TrainResult train_variant(const RunConfig& base, const std::string& variant, int epochs,
                          int warmup) {
    RunConfig rc = base;
    rc.variant = variant;
    rc.train.epochs = epochs;
    rc.train.warmup = warmup;
    if (variant == "pcl-advpgd") rc.train.adv_steps = kAdvSteps;
    return train(spec_for(rc), g_runs.at(rc.seed).train_ds, train_config_for(rc));
}

double pgd_accuracy(const TrainResult& run, const Dataset& ds, uint64_t seed) {
    AttackConfig cfg;
    cfg.kind = AttackKind::pgd;
    cfg.epsilon = kPgdEps;
    cfg.steps = kEvalPgdSteps;
    cfg.seed = 0xACCE5700ULL + seed;
    AdvBatch b = attack_dataset(run.model, run.protos, ds, cfg, 256);
    int64_t hits = 0;
    for (size_t i = 0; i < b.labels.size(); ++i) hits += b.adv_pred[i] == b.labels[i];
    return double(hits) / double(b.labels.size());
}

void gate_trends(Checker& c) {
    auto t0 = std::chrono::steady_clock::now();
    int ce_collapses = 0, pcl_gains = 0, adv_improves = 0;
    std::string ce_s, pcl_s, adv_s;
    for (uint64_t seed : kSeeds) {
        RunConfig rc = trend_config(seed);
        SeedRuns& runs = g_runs[seed];
        runs.train_ds = load_split(rc, "train");
        runs.eval_ds = load_split(rc, "eval");

        runs.ce = train_variant(rc, "ce-only", kCeEpochs, kCeEpochs);
        runs.pcl = train_variant(rc, "pcl", kPclEpochs, kPclWarmup);
        runs.adv = train_variant(rc, "pcl-advpgd", kAdvEpochs, kAdvWarmup);

        runs.acc_ce = pgd_accuracy(runs.ce, runs.eval_ds, seed);
        runs.acc_pcl = pgd_accuracy(runs.pcl, runs.eval_ds, seed);
        runs.acc_adv = pgd_accuracy(runs.adv, runs.eval_ds, seed);

        ce_collapses += runs.acc_ce < kCeCollapseMax;
        pcl_gains += runs.acc_pcl >= runs.acc_ce + kConformityGainMin;
        adv_improves += runs.acc_adv > runs.acc_pcl;
        ce_s += (ce_s.empty() ? "" : "/") + fmt(runs.acc_ce);
        pcl_s += (pcl_s.empty() ? "" : "/") + fmt(runs.acc_pcl);
        adv_s += (adv_s.empty() ? "" : "/") + fmt(runs.acc_adv);
    }
    c.require(ce_collapses >= 2, "plain model collapses under pgd on only " +
                                     std::to_string(ce_collapses) + "/3 seeds (" + ce_s + ")");
    c.require(pcl_gains >= 2, "conformity gains >= 10 points on only " +
                                  std::to_string(pcl_gains) + "/3 seeds (" + pcl_s + " vs " +
                                  ce_s + ")");
    c.require(adv_improves >= 2, "adversarial phase improves on only " +
                                     std::to_string(adv_improves) + "/3 seeds (" + adv_s +
                                     " vs " + pcl_s + ")");
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.require(secs < kTrendBudgetSeconds,
              "runtime " + fmt(secs) + "s over the " + fmt(kTrendBudgetSeconds) + "s budget");
    c.note("pgd accuracy plain " + ce_s + ", conformity " + pcl_s + ", +advtrain " + adv_s);
}

// ---------------------------------------------------------------------------
// Gradient-masking checklist on the defended model.

void gate_masking(Checker& c) {
    c.require(g_runs.count(1) != 0, "trend gate did not run");
    if (g_runs.count(1) == 0) return;
    SeedRuns& runs = g_runs.at(1);
    EvalTarget target{&runs.pcl.model, &runs.pcl.protos, "defended"};

    Model source = make_black_box_source(runs.train_ds, splitmix64(1 ^ 0xb1acb0c5ULL));
    EvalTarget source_target{&source, nullptr, "source"};

    std::vector<AttackConfig> attacks;
    for (AttackKind kind : {AttackKind::fgsm, AttackKind::bim, AttackKind::mim, AttackKind::cw,
                            AttackKind::pgd}) {
        AttackConfig a;
        a.kind = kind;
        a.epsilon = kPgdEps;
        a.steps = kEvalSteps;
        a.iters = kEvalCwIters;
        attacks.push_back(a);
    }

    EvalReport report;
    evaluate_robustness(target, runs.eval_ds, attacks, EvalSetting::white, 901, report);
    evaluate_robustness(target, runs.eval_ds, attacks, EvalSetting::black, 902, report,
                        &source_target);

    AttackConfig base;
    base.epsilon = kPgdEps;
    base.steps = kEvalSteps;
    std::vector<SweepCurve> curves = epsilon_sweep(
        target, runs.eval_ds, {AttackKind::fgsm, AttackKind::pgd}, kSweepGrid, base, 903);

    MaskingChecklist list =
        masking_checklist(report, curves, kHighEps, kSweepTol, kHighEpsCeiling, kBlackTol);
    for (const ChecklistItem& item : list.items)
        c.require(item.pass, item.name + ": " + item.detail);
    if (list.ok) c.note("all checklist items on the defended model");
}

// ---------------------------------------------------------------------------
// Feature-space margins.

void gate_margin(Checker& c) {
    c.require(!g_runs.empty(), "trend gate did not run");
    if (g_runs.empty()) return;
    int wins = 0;
    std::string detail;
    for (uint64_t seed : kSeeds) {
        SeedRuns& runs = g_runs.at(seed);
        EvalTarget pcl{&runs.pcl.model, &runs.pcl.protos, "defended"};
        EvalTarget ce{&runs.ce.model, &runs.ce.protos, "plain"};
        MarginProbe mp = margin_probe(pcl, runs.eval_ds, kProbeEps, kProbeSamples, kProbeDraws,
                                      5);
        MarginProbe mc = margin_probe(ce, runs.eval_ds, kProbeEps, kProbeSamples, kProbeDraws,
                                      5);
        wins += mp.ratio > mc.ratio;
        if (!detail.empty()) detail += ", ";
        detail += "seed " + std::to_string(seed) + ": " + fmt(mp.ratio) + " vs " +
                  fmt(mc.ratio);
    }
    c.require(wins >= 2, "separation ratio larger on only " + std::to_string(wins) +
                             "/3 seeds (" + detail + ")");
    c.note(detail);
}

// ---------------------------------------------------------------------------
// Tap ablation.

void gate_ablation(Checker& c) {
    c.require(!g_runs.empty(), "trend gate did not run");
    if (g_runs.empty()) return;
    ModelSpec spec = ModelSpec::by_name("cnn6-tiny", 10);
    c.require(spec.taps.size() == 3, "expected three tap depths");
    if (spec.taps.size() != 3) return;

    int wins = 0;
    std::string detail;
    for (uint64_t seed : kSeeds) {
        SeedRuns& runs = g_runs.at(seed);
        Dataset small = subset(runs.train_ds, kAblTrainN, 50 + seed);
        TrainConfig tc;
        tc.epochs = kAblEpochs;
        tc.warmup = kAblWarmup;
        std::vector<AblationRow> rows = layer_ablation(
            spec, {{0}, {1, 2}}, small, runs.eval_ds, tc, kPgdEps, 60 + seed);
        wins += rows[1].pgd > rows[0].pgd;
        if (!detail.empty()) detail += ", ";
        detail += "seed " + std::to_string(seed) + ": deep " + fmt(rows[1].pgd) +
                  " vs shallow " + fmt(rows[0].pgd);
    }
    c.require(wins >= 2, "deepest pair beats shallowest tap on only " + std::to_string(wins) +
                             "/3 seeds (" + detail + ")");
    c.note(detail);
}

// ---------------------------------------------------------------------------
// Determinism and round trips.

void gate_determinism(Checker& c) {
    {
        Dataset ds = synth_digits(257, 9);
        std::string path = g_scratch + "/roundtrip.psh";
        save_dataset(path, ds);
        Dataset back = load_dataset(path);
        c.require(testutil::bitwise_equal(back.images, ds.images), "dataset pixels changed");
        c.require(back.labels == ds.labels, "dataset labels changed");
        c.require(back.num_classes == ds.num_classes, "dataset class count changed");
    }

    c.require(g_runs.count(1) != 0, "trend gate did not run");
    if (g_runs.count(1) == 0) return;
    SeedRuns& runs = g_runs.at(1);

    std::string ckpt = g_scratch + "/defended.ckpt";
    CheckpointMeta meta;
    meta.seed = 1;
    meta.variant = "pcl";
    save_checkpoint(ckpt, runs.pcl.model, runs.pcl.protos, meta);
    Checkpoint back = load_checkpoint(ckpt);
    std::vector<Tensor> a = runs.pcl.model.parameters();
    std::vector<Tensor> b = back.model.parameters();
    c.require(a.size() == b.size(), "parameter count changed across checkpoint");
    bool params_equal = a.size() == b.size();
    for (size_t i = 0; params_equal && i < a.size(); ++i)
        params_equal = testutil::bitwise_equal(a[i], b[i]);
    c.require(params_equal, "parameters changed across checkpoint");
    bool protos_equal = back.protos.size() == runs.pcl.protos.size();
    for (size_t i = 0; protos_equal && i < back.protos.size(); ++i)
        protos_equal =
            testutil::bitwise_equal(back.protos[i].centroids, runs.pcl.protos[i].centroids);
    c.require(protos_equal, "prototypes changed across checkpoint");

    std::string common = "eval --ckpt " + ckpt +
                         " --data digits --train-n 200 --eval-n 200 --attacks fgsm,bim"
                         " --eps 0.1 --seed 4 -q --out ";
    int rc1 = run_cli(common + g_scratch + "/det_a", "det_a.log");
    int rc2 = run_cli(common + g_scratch + "/det_b", "det_b.log");
    c.require(rc1 == 0 && rc2 == 0, "deterministic eval runs exited " + std::to_string(rc1) +
                                        "/" + std::to_string(rc2));
    std::string ra = testutil::read_file(g_scratch + "/det_a/report.csv");
    std::string rb = testutil::read_file(g_scratch + "/det_b/report.csv");
    c.require(!ra.empty() && ra == rb, "repeated evaluation reports differ");
    c.note("dataset, checkpoint, and repeated reports bitwise stable");
}

// ---------------------------------------------------------------------------
// End-to-end pipeline.

void gate_pipeline(Checker& c) {
    std::string out = g_scratch + "/repro";
    auto t0 = std::chrono::steady_clock::now();
    int rc = run_cli("repro --profile tiny -q --out " + out, "repro.log");
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.require(rc == 0, "pipeline exited " + std::to_string(rc));
    c.require(secs < kReproBudgetSeconds,
              "runtime " + fmt(secs) + "s over the " + fmt(kReproBudgetSeconds) + "s budget");
    if (rc != 0) return;

    for (const char* name : {"report.csv", "report.txt", "transfer.csv", "sweep.csv",
                             "probe.csv", "masking_checklist.txt", "config.json"}) {
        c.require(fs::exists(out + "/" + name), std::string(name) + " missing");
    }

    std::string csv = testutil::read_file(out + "/report.csv");
    c.require(csv.rfind("# protoshield", 0) == 0, "report.csv lacks the provenance line");
    const std::vector<std::string> variants = {"Softmax", "Ours", "Ours+AdvTrain_FGSM",
                                               "Ours+AdvTrain_PGD"};
    const std::vector<std::string> kinds = {"fgsm", "bim", "mim", "cw", "pgd"};
    int missing = 0;
    for (const std::string& v : variants) {
        if (csv.find(v + ",none,clean,") == std::string::npos) ++missing;
        for (const std::string& k : kinds)
            for (const char* setting : {"white", "black"})
                if (csv.find(v + "," + k + "," + setting + ",") == std::string::npos) ++missing;
    }
    c.require(missing == 0, std::to_string(missing) + " expected report rows missing");
    c.note("all artifacts and " + std::to_string(4 * (1 + 2 * 5)) + " report rows in " +
           fmt(secs) + "s");
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <path-to-cli>\n");
        return 2;
    }
    g_cli = argv[1];
    g_scratch = (fs::temp_directory_path() / "protoshield-acceptance").string();
    fs::remove_all(g_scratch);
    fs::create_directories(g_scratch);

    gate("gradient_finite_difference", gate_gradients);
    gate("attack_budget_contracts", gate_attacks);
    gate("conformity_closed_forms", gate_closed_forms);
    gate("robustness_trends", gate_trends);
    gate("masking_checklist", gate_masking);
    gate("margin_separation", gate_margin);
    gate("tap_ablation_trend", gate_ablation);
    gate("determinism_round_trips", gate_determinism);
    gate("repro_pipeline", gate_pipeline);

    std::printf("%s\n", g_all_pass ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL");
    return g_all_pass ? 0 : 1;
}
