// Command-line front end: train | attack | eval | transfer | sweep | probe |
// ablate | repro. One JSON config per run, flags override file values. Exit
// codes: 0 success, 1 runtime failure, 2 configuration or input-format error.

#include <algorithm>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "protoshield/attacks.hpp"
#include "protoshield/common.hpp"
#include "protoshield/config.hpp"
#include "protoshield/data.hpp"
#include "protoshield/eval.hpp"
#include "protoshield/model.hpp"
#include "protoshield/rng.hpp"
#include "protoshield/train.hpp"

namespace ps = protoshield;
namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::string config;
    std::optional<uint64_t> seed;
    std::optional<std::string> out, variant, model, data_source, data_dir, setting;
    std::optional<std::string> attack_kind, attack_loss;
    std::optional<int64_t> train_n, eval_n, eval_batch;
    std::optional<int> epochs, warmup, batch_size, steps, cw_iters, restarts;
    std::optional<int> probe_draws, probe_samples;
    std::optional<double> lr, eps, decay, cw_c, cw_lr, kappa, probe_eps, high_eps;
    std::optional<std::vector<std::string>> attacks, sweep_kinds;
    std::optional<std::vector<double>> sweep_grid;
    int proto_pred = 0;
    int quiet = 0;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("-c,--config", o.config, "JSON run config; flags override file values");
    cmd->add_option("--seed", o.seed, "run seed");
    cmd->add_option("--out", o.out, "output directory (PROTOSHIELD_OUT prefixes relative paths)");
    cmd->add_option("--variant", o.variant, "ce-only | pcl | pcl-advfgsm | pcl-advpgd");
    cmd->add_option("--model", o.model, "cnn6 | cnn6-tiny | source-net");
    cmd->add_option("--data", o.data_source, "digits | blobs | idx | file");
    cmd->add_option("--data-dir", o.data_dir, "IDX directory for the digits source");
    cmd->add_option("--train-n", o.train_n, "training samples");
    cmd->add_option("--eval-n", o.eval_n, "evaluation samples");
    cmd->add_option("--epochs", o.epochs, "total training epochs");
    cmd->add_option("--warmup", o.warmup, "cross-entropy-only epochs");
    cmd->add_option("--batch-size", o.batch_size, "training batch size");
    cmd->add_option("--lr", o.lr, "base learning rate");
    cmd->add_option("--attack", o.attack_kind, "fgsm | bim | mim | cw | pgd");
    cmd->add_option("--eps", o.eps, "perturbation budget epsilon");
    cmd->add_option("--steps", o.steps, "iterative attack steps");
    cmd->add_option("--decay", o.decay, "momentum mu for mim");
    cmd->add_option("--attack-loss", o.attack_loss, "attack inner loss: ce | joint");
    cmd->add_option("--cw-c", o.cw_c, "cw distance/margin trade-off");
    cmd->add_option("--cw-iters", o.cw_iters, "cw optimizer iterations");
    cmd->add_option("--cw-lr", o.cw_lr, "cw optimizer rate");
    cmd->add_option("--kappa", o.kappa, "cw confidence margin");
    cmd->add_option("--restarts", o.restarts, "pgd random restarts");
    cmd->add_option("--setting", o.setting, "white | black | adaptive");
    cmd->add_option("--attacks", o.attacks, "attack kinds for eval reports")->delimiter(',');
    cmd->add_option("--sweep-kinds", o.sweep_kinds, "attack kinds to sweep")->delimiter(',');
    cmd->add_option("--sweep-grid", o.sweep_grid, "ascending epsilon grid from 0")->delimiter(',');
    cmd->add_option("--probe-eps", o.probe_eps, "margin probe epsilon");
    cmd->add_option("--probe-draws", o.probe_draws, "perturbation draws per probed sample");
    cmd->add_option("--probe-samples", o.probe_samples, "probed sample count");
    cmd->add_option("--high-eps", o.high_eps, "masking-checklist collapse epsilon");
    cmd->add_option("--eval-batch", o.eval_batch, "evaluation batch size");
    cmd->add_flag("--proto-pred", o.proto_pred, "classify by nearest prototype");
    cmd->add_flag("-q,--quiet", o.quiet, "suppress progress output");
}

void apply_overrides(ps::RunConfig& cfg, const Overrides& o) {
    if (o.seed) cfg.seed = *o.seed;
    if (o.out) cfg.output_dir = *o.out;
    if (o.variant) cfg.variant = *o.variant;
    if (o.model) cfg.model = *o.model;
    if (o.data_source) cfg.data.source = *o.data_source;
    if (o.data_dir) cfg.data.dir = *o.data_dir;
    if (o.train_n) cfg.data.train_n = *o.train_n;
    if (o.eval_n) cfg.data.eval_n = *o.eval_n;
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.warmup) cfg.train.warmup = *o.warmup;
    if (o.batch_size) cfg.train.batch_size = *o.batch_size;
    if (o.lr) cfg.train.lr.base = *o.lr;
    if (o.attack_kind) cfg.attack.kind = ps::attack_kind_from_name(*o.attack_kind);
    if (o.eps) cfg.attack.epsilon = *o.eps;
    if (o.steps) cfg.attack.steps = *o.steps;
    if (o.decay) cfg.attack.decay = *o.decay;
    if (o.attack_loss) {
        if (*o.attack_loss == "ce") cfg.attack.loss_mode = ps::LossMode::ce;
        else if (*o.attack_loss == "joint") cfg.attack.loss_mode = ps::LossMode::joint;
        else throw ps::ConfigError("--attack-loss must be 'ce' or 'joint'");
    }
    if (o.cw_c) cfg.attack.c = *o.cw_c;
    if (o.cw_iters) cfg.attack.iters = *o.cw_iters;
    if (o.cw_lr) cfg.attack.lr = *o.cw_lr;
    if (o.kappa) cfg.attack.kappa = *o.kappa;
    if (o.restarts) cfg.attack.restarts = *o.restarts;
    if (o.setting) cfg.eval.setting = *o.setting;
    if (o.attacks) cfg.eval.attacks = *o.attacks;
    if (o.sweep_kinds) cfg.eval.sweep_kinds = *o.sweep_kinds;
    if (o.sweep_grid) cfg.eval.sweep_grid = *o.sweep_grid;
    if (o.probe_eps) cfg.eval.probe_eps = *o.probe_eps;
    if (o.probe_draws) cfg.eval.probe_draws = *o.probe_draws;
    if (o.probe_samples) cfg.eval.probe_samples = *o.probe_samples;
    if (o.high_eps) cfg.eval.high_eps = *o.high_eps;
    if (o.eval_batch) cfg.eval.batch_size = *o.eval_batch;
    if (o.proto_pred) cfg.eval.prototype_pred = true;
}

// Merged config, re-validated through the same parser that checks files.
ps::RunConfig build_config(const Overrides& o) {
    ps::RunConfig cfg = o.config.empty() ? ps::RunConfig{} : ps::load_run_config(o.config);
    apply_overrides(cfg, o);
    return ps::parse_run_config(ps::run_config_json(cfg));
}

std::string prepare_out_dir(const ps::RunConfig& cfg) {
    std::string dir = ps::resolve_output_dir(cfg);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string hash_hex(uint64_t h) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
    return buf;
}

std::string variant_display(const std::string& key) {
    if (key == "ce-only") return "Softmax";
    if (key == "pcl") return "Ours";
    if (key == "pcl-advfgsm") return "Ours+AdvTrain_FGSM";
    if (key == "pcl-advpgd") return "Ours+AdvTrain_PGD";
    return key.empty() ? "model" : key;
}

ps::Checkpoint load_ckpt(const std::string& path) {
    if (path.empty()) throw ps::ConfigError("--ckpt is required");
    if (!fs::exists(path)) throw ps::ConfigError("checkpoint not found: " + path);
    return ps::load_checkpoint(path);
}

int cmd_train(const Overrides& o) {
    ps::RunConfig cfg = build_config(o);
    std::string dir = prepare_out_dir(cfg);
    std::string header = ps::report_header(ps::config_hash(cfg), cfg.seed);

    ps::Dataset data = ps::load_split(cfg, "train");
    ps::ModelSpec spec = ps::spec_for(cfg);
    ps::TrainConfig tc = ps::train_config_for(cfg);
    tc.verbose = !o.quiet;
    if (tc.checkpoint_every > 0 && tc.checkpoint_dir.empty()) tc.checkpoint_dir = dir;
    if (!o.quiet)
        std::printf("training %s (%s) on %s, %lld samples\n", cfg.model.c_str(),
                    cfg.variant.c_str(), data.provenance.c_str(),
                    static_cast<long long>(data.size()));

    ps::TrainResult res = ps::train(spec, data, tc);

    ps::CheckpointMeta meta;
    meta.seed = cfg.seed;
    meta.config_hash = hash_hex(ps::config_hash(cfg));
    meta.variant = cfg.variant;
    ps::save_checkpoint(dir + "/model.ckpt", res.model, res.protos, meta);
    ps::write_prototype_csv(dir + "/prototypes.csv", res.protos, header);
    ps::write_train_log(dir + "/train_log.csv", res.log, header);

    const ps::EpochRecord& last = res.log.epochs.back();
    std::printf("done: train accuracy %.4f, loss %.4f; wrote %s/model.ckpt\n", last.clean_acc,
                last.loss_total, dir.c_str());
    return ps::kExitOk;
}

int cmd_attack(const Overrides& o, const std::string& ckpt) {
    ps::RunConfig cfg = build_config(o);
    std::string dir = prepare_out_dir(cfg);
    std::string header = ps::report_header(ps::config_hash(cfg), cfg.seed);

    ps::Checkpoint ck = load_ckpt(ckpt);
    ps::Dataset data = ps::load_split(cfg, "eval");
    ps::AttackConfig a = cfg.attack;
    a.seed = ps::splitmix64(ps::config_hash(cfg));
    a.validate();

    ps::AdvBatch batch = ps::attack_dataset(ck.model, ck.protos, data, a, cfg.eval.batch_size);
    std::string base = dir + "/adv_" + ps::attack_kind_name(a.kind);
    ps::save_adv_batch(base, batch, header);

    int64_t hits = 0;
    double linf_max = 0.0, linf_sum = 0.0;
    for (size_t i = 0; i < batch.success.size(); ++i) {
        hits += batch.adv_pred[i] == batch.labels[i];
        linf_max = std::max(linf_max, batch.linf[i]);
        linf_sum += batch.linf[i];
    }
    std::printf("%s: accuracy under attack %.4f, success rate %.4f, linf mean %.4f max %.4f\n",
                ps::attack_kind_name(a.kind),
                double(hits) / double(batch.success.size()),
                1.0 - double(hits) / double(batch.success.size()),
                linf_sum / double(batch.success.size()), linf_max);
    std::printf("wrote %s.bin and %s.csv\n", base.c_str(), base.c_str());
    return ps::kExitOk;
}

int cmd_eval(const Overrides& o, const std::string& ckpt, const std::string& source_ckpt) {
    ps::RunConfig cfg = build_config(o);
    std::string dir = prepare_out_dir(cfg);
    uint64_t hash = ps::config_hash(cfg);
    std::string header = ps::report_header(hash, cfg.seed);

    ps::Checkpoint ck = load_ckpt(ckpt);
    ps::EvalTarget target{&ck.model, &ck.protos, variant_display(ck.meta.variant)};
    ps::Dataset data = ps::load_split(cfg, "eval");

    ps::EvalSetting setting = ps::setting_from_name(cfg.eval.setting);
    ps::Checkpoint source;
    ps::EvalTarget source_target;
    bool have_source = !source_ckpt.empty();
    if (have_source) {
        source = load_ckpt(source_ckpt);
        source_target = {&source.model, &source.protos, variant_display(source.meta.variant)};
    }
    if (setting == ps::EvalSetting::black && !have_source)
        throw ps::ConfigError("--source-ckpt is required for the black setting");

    std::vector<ps::AttackConfig> attacks;
    for (const std::string& name : cfg.eval.attacks)
        attacks.push_back(ps::attack_config_for(cfg, name));

    ps::EvalReport report;
    ps::evaluate_robustness(target, data, attacks, setting, hash, report,
                            have_source ? &source_target : nullptr, cfg.eval.prototype_pred,
                            cfg.eval.batch_size);

    ps::write_report_csv(dir + "/report.csv", report, header);
    ps::write_report_text(dir + "/report.txt", report, header);
    ps::format_report_text(std::cout, report);
    std::printf("wrote %s/report.csv and report.txt\n", dir.c_str());
    return ps::kExitOk;
}

int cmd_transfer(const Overrides& o, const std::vector<std::string>& ckpts) {
    ps::RunConfig cfg = build_config(o);
    if (ckpts.size() < 2)
        throw ps::ConfigError("transfer needs at least two --ckpt checkpoints");
    std::string dir = prepare_out_dir(cfg);
    uint64_t hash = ps::config_hash(cfg);

    std::vector<ps::Checkpoint> cks;
    cks.reserve(ckpts.size());
    for (const std::string& p : ckpts) cks.push_back(load_ckpt(p));
    std::vector<ps::EvalTarget> targets;
    for (size_t i = 0; i < cks.size(); ++i) {
        std::string name = variant_display(cks[i].meta.variant);
        for (const ps::EvalTarget& prev : targets)
            if (prev.variant == name) name += "#" + std::to_string(i);
        targets.push_back({&cks[i].model, &cks[i].protos, name});
    }

    ps::Dataset data = ps::load_split(cfg, "eval");
    ps::AttackConfig a = cfg.attack;
    a.validate();
    ps::TransferMatrix tm = ps::transfer_matrix(targets, data, a, hash, cfg.eval.batch_size);

    ps::write_transfer_csv(dir + "/transfer.csv", tm, ps::report_header(hash, cfg.seed));
    ps::format_transfer_text(std::cout, tm);
    std::printf("wrote %s/transfer.csv\n", dir.c_str());
    return ps::kExitOk;
}

int cmd_sweep(const Overrides& o, const std::string& ckpt) {
    ps::RunConfig cfg = build_config(o);
    std::string dir = prepare_out_dir(cfg);
    uint64_t hash = ps::config_hash(cfg);

    ps::Checkpoint ck = load_ckpt(ckpt);
    ps::EvalTarget target{&ck.model, &ck.protos, variant_display(ck.meta.variant)};
    ps::Dataset data = ps::load_split(cfg, "eval");

    std::vector<ps::AttackKind> kinds;
    for (const std::string& name : cfg.eval.sweep_kinds)
        kinds.push_back(ps::attack_kind_from_name(name));

    std::vector<ps::SweepCurve> curves = ps::epsilon_sweep(target, data, kinds,
                                                           cfg.eval.sweep_grid, cfg.attack,
                                                           hash, cfg.eval.batch_size);
    ps::write_sweep_csv(dir + "/sweep.csv", curves, ps::report_header(hash, cfg.seed));
    for (const ps::SweepCurve& c : curves)
        for (size_t i = 0; i < c.epsilons.size(); ++i)
            std::printf("%-5s eps %-6.4g accuracy %.4f\n", ps::attack_kind_name(c.kind),
                        c.epsilons[i], c.accuracy[i]);
    std::printf("wrote %s/sweep.csv\n", dir.c_str());
    return ps::kExitOk;
}

int cmd_probe(const Overrides& o, const std::string& ckpt) {
    ps::RunConfig cfg = build_config(o);
    std::string dir = prepare_out_dir(cfg);
    uint64_t hash = ps::config_hash(cfg);

    ps::Checkpoint ck = load_ckpt(ckpt);
    ps::EvalTarget target{&ck.model, &ck.protos, variant_display(ck.meta.variant)};
    ps::Dataset data = ps::load_split(cfg, "eval");

    int n_samples = std::min<int64_t>(cfg.eval.probe_samples, data.size());
    ps::MarginProbe probe = ps::margin_probe(target, data, cfg.eval.probe_eps, n_samples,
                                             cfg.eval.probe_draws, cfg.seed);
    ps::write_probe_csv(dir + "/probe.csv", probe, ps::report_header(hash, cfg.seed));
    ps::format_probe_text(std::cout, probe);
    std::printf("wrote %s/probe.csv\n", dir.c_str());
    return ps::kExitOk;
}

std::vector<std::vector<int>> parse_subsets(const std::string& text, size_t num_taps) {
    std::vector<std::vector<int>> subsets;
    if (text.empty()) {
        // Every subset of the available taps, empty (= plain cross entropy)
        // first, in mask order.
        for (size_t mask = 0; mask < (size_t(1) << num_taps); ++mask) {
            std::vector<int> s;
            for (size_t t = 0; t < num_taps; ++t)
                if (mask & (size_t(1) << t)) s.push_back(static_cast<int>(t));
            subsets.push_back(std::move(s));
        }
        return subsets;
    }
    std::string token;
    std::istringstream ss(text);
    while (std::getline(ss, token, ';')) {
        std::vector<int> s;
        if (token != "none" && !token.empty()) {
            std::istringstream ts(token);
            std::string item;
            while (std::getline(ts, item, ',')) {
                try {
                    s.push_back(std::stoi(item));
                } catch (const std::exception&) {
                    throw ps::ConfigError("--subsets: '" + item + "' is not a tap index");
                }
            }
        }
        subsets.push_back(std::move(s));
    }
    if (subsets.empty()) throw ps::ConfigError("--subsets parsed to nothing");
    return subsets;
}

int cmd_ablate(const Overrides& o, const std::string& subsets_text) {
    ps::RunConfig cfg = build_config(o);
    std::string dir = prepare_out_dir(cfg);
    uint64_t hash = ps::config_hash(cfg);

    ps::ModelSpec spec = ps::spec_for(cfg);
    std::vector<std::vector<int>> subsets = parse_subsets(subsets_text, spec.taps.size());

    ps::Dataset train_data = ps::load_split(cfg, "train");
    ps::Dataset eval_data = ps::load_split(cfg, "eval");
    ps::TrainConfig tc = ps::train_config_for(cfg);
    tc.verbose = false;

    std::vector<ps::AblationRow> rows = ps::layer_ablation(spec, subsets, train_data, eval_data,
                                                           tc, cfg.attack.epsilon, cfg.seed);
    ps::write_ablation_csv(dir + "/ablation.csv", rows, ps::report_header(hash, cfg.seed));
    std::printf("%-12s  %8s  %8s  %8s\n", "taps", "clean", "fgsm", "pgd");
    for (const ps::AblationRow& r : rows)
        std::printf("%-12s  %7.2f%%  %7.2f%%  %7.2f%%\n", r.label.c_str(), 100 * r.clean,
                    100 * r.fgsm, 100 * r.pgd);
    std::printf("wrote %s/ablation.csv\n", dir.c_str());
    return ps::kExitOk;
}

ps::RunConfig repro_config(const std::string& profile) {
    ps::RunConfig cfg;
    cfg.model = "cnn6-tiny";
    if (profile == "tiny") {
        cfg.data.source = "blobs";
        cfg.data.train_n = 1000;
        cfg.data.eval_n = 100;
        cfg.train.epochs = 3;
        cfg.train.warmup = 1;
        cfg.train.adv_steps = 5;
        cfg.attack.iters = 30;  // enough for the tiny models to converge
        cfg.eval.sweep_kinds = {"fgsm", "pgd"};
        cfg.eval.sweep_grid = {0.0, 0.1, 0.3, 0.6};
        cfg.eval.probe_samples = 64;
        cfg.output_dir = "runs/repro-tiny";
    } else if (profile == "desk") {
        cfg.data.source = "digits";
        cfg.data.train_n = 10000;
        cfg.data.eval_n = 1000;
        cfg.train.epochs = 8;
        cfg.train.warmup = 2;
        cfg.train.lr.decay_epochs = {6};
        cfg.attack.iters = 200;
        cfg.output_dir = "runs/repro-desk";
    } else {
        throw ps::ConfigError("repro profile must be 'tiny' or 'desk'");
    }
    return cfg;
}

int cmd_repro(const Overrides& o, const std::string& profile) {
    if (!o.config.empty())
        throw ps::ConfigError("repro builds its own config from --profile; use flag overrides");
    ps::RunConfig cfg = repro_config(profile);
    apply_overrides(cfg, o);
    cfg = ps::parse_run_config(ps::run_config_json(cfg));

    std::string dir = prepare_out_dir(cfg);
    uint64_t hash = ps::config_hash(cfg);
    std::string header = ps::report_header(hash, cfg.seed);
    bool quiet = o.quiet > 0;

    {
        std::ofstream os(dir + "/config.json", std::ios::binary);
        if (!os) throw ps::FormatError("cannot open " + dir + "/config.json for writing");
        os << ps::run_config_json(cfg) << "\n";
    }

    ps::Dataset train_data = ps::load_split(cfg, "train");
    ps::Dataset eval_data = ps::load_split(cfg, "eval");
    ps::ModelSpec spec = ps::spec_for(cfg);

    const std::vector<std::string> variant_keys = {"ce-only", "pcl", "pcl-advfgsm",
                                                   "pcl-advpgd"};
    std::vector<ps::TrainResult> runs;
    for (const std::string& key : variant_keys) {
        if (!quiet) std::printf("[repro] training %s\n", variant_display(key).c_str());
        ps::RunConfig vcfg = cfg;
        vcfg.variant = key;
        ps::TrainConfig tc = ps::train_config_for(vcfg);
        tc.verbose = false;
        runs.push_back(ps::train(spec, train_data, tc));

        ps::CheckpointMeta meta;
        meta.seed = cfg.seed;
        meta.config_hash = hash_hex(hash);
        meta.variant = key;
        ps::save_checkpoint(dir + "/" + key + ".ckpt", runs.back().model, runs.back().protos,
                            meta);
        ps::write_train_log(dir + "/" + key + "_train.csv", runs.back().log, header);
    }

    if (!quiet) std::printf("[repro] training black-box source\n");
    ps::Model source = ps::make_black_box_source(train_data,
                                                 ps::splitmix64(cfg.seed ^ 0xb1acb0c5ULL));
    ps::EvalTarget source_target{&source, nullptr, "source"};

    std::vector<ps::AttackConfig> attacks;
    for (const char* name : {"fgsm", "bim", "mim", "cw", "pgd"})
        attacks.push_back(ps::attack_config_for(cfg, name));

    ps::EvalReport report;
    std::vector<ps::EvalTarget> targets;
    for (size_t i = 0; i < runs.size(); ++i)
        targets.push_back({&runs[i].model, &runs[i].protos,
                           variant_display(variant_keys[i])});
    for (const ps::EvalTarget& t : targets) {
        if (!quiet) std::printf("[repro] white-box attacks on %s\n", t.variant.c_str());
        ps::evaluate_robustness(t, eval_data, attacks, ps::EvalSetting::white, hash, report,
                                nullptr, cfg.eval.prototype_pred, cfg.eval.batch_size);
    }
    for (const ps::EvalTarget& t : targets) {
        if (!quiet) std::printf("[repro] black-box attacks on %s\n", t.variant.c_str());
        ps::evaluate_robustness(t, eval_data, attacks, ps::EvalSetting::black, hash, report,
                                &source_target, cfg.eval.prototype_pred, cfg.eval.batch_size);
    }
    ps::write_report_csv(dir + "/report.csv", report, header);
    ps::write_report_text(dir + "/report.txt", report, header);

    if (!quiet) std::printf("[repro] transferability matrix\n");
    ps::TransferMatrix tm = ps::transfer_matrix(targets, eval_data,
                                                ps::attack_config_for(cfg, "pgd"), hash,
                                                cfg.eval.batch_size);
    ps::write_transfer_csv(dir + "/transfer.csv", tm, header);

    if (!quiet) std::printf("[repro] epsilon sweep on %s\n", targets[1].variant.c_str());
    std::vector<ps::AttackKind> sweep_kinds;
    for (const std::string& name : cfg.eval.sweep_kinds)
        sweep_kinds.push_back(ps::attack_kind_from_name(name));
    std::vector<ps::SweepCurve> curves = ps::epsilon_sweep(targets[1], eval_data, sweep_kinds,
                                                           cfg.eval.sweep_grid, cfg.attack,
                                                           hash, cfg.eval.batch_size);
    ps::write_sweep_csv(dir + "/sweep.csv", curves, header);

    if (!quiet) std::printf("[repro] margin probe\n");
    int n_probe = static_cast<int>(std::min<int64_t>(cfg.eval.probe_samples, eval_data.size()));
    ps::MarginProbe probe = ps::margin_probe(targets[1], eval_data, cfg.eval.probe_eps, n_probe,
                                             cfg.eval.probe_draws, cfg.seed);
    ps::write_probe_csv(dir + "/probe.csv", probe, header);
    ps::MarginProbe probe_ce = ps::margin_probe(targets[0], eval_data, cfg.eval.probe_eps,
                                                n_probe, cfg.eval.probe_draws, cfg.seed);

    // Masking diagnostics judge the plain defended model, as in the paper.
    ps::EvalReport ours;
    for (const ps::EvalRow& r : report.rows)
        if (r.variant == targets[1].variant) ours.rows.push_back(r);
    ps::MaskingChecklist checklist = ps::masking_checklist(ours, curves, cfg.eval.high_eps);
    {
        std::ofstream os(dir + "/masking_checklist.txt", std::ios::binary);
        if (!os)
            throw ps::FormatError("cannot open " + dir + "/masking_checklist.txt for writing");
        os << header << "\n";
        ps::format_checklist_text(os, checklist);
    }

    ps::format_report_text(std::cout, report);
    ps::format_transfer_text(std::cout, tm);
    std::printf("\nmargin ratio m/(2*lambda_max): %s %.4f vs %s %.4f\n",
                targets[1].variant.c_str(), probe.ratio, targets[0].variant.c_str(),
                probe_ce.ratio);
    ps::format_checklist_text(std::cout, checklist);
    std::printf("wrote report.csv report.txt transfer.csv sweep.csv probe.csv "
                "masking_checklist.txt under %s\n",
                dir.c_str());
    return ps::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prototype-conformity adversarial robustness workbench"};
    app.set_version_flag("--version", ps::kVersion);
    app.require_subcommand(1);

    Overrides o;
    std::string ckpt, source_ckpt, subsets_text, profile = "tiny";
    std::vector<std::string> ckpts;

    CLI::App* train = app.add_subcommand("train", "train a model variant, write a checkpoint");
    add_common(train, o);

    CLI::App* attack = app.add_subcommand("attack", "craft adversarial examples for a checkpoint");
    add_common(attack, o);
    attack->add_option("--ckpt", ckpt, "model checkpoint")->required();

    CLI::App* eval = app.add_subcommand("eval", "robustness report for a checkpoint");
    add_common(eval, o);
    eval->add_option("--ckpt", ckpt, "model checkpoint")->required();
    eval->add_option("--source-ckpt", source_ckpt, "source model for the black setting");

    CLI::App* transfer = app.add_subcommand("transfer", "cross-model transferability matrix");
    add_common(transfer, o);
    transfer->add_option("--ckpt", ckpts, "model checkpoints (repeat; at least two)");

    CLI::App* sweep = app.add_subcommand("sweep", "accuracy over an epsilon grid");
    add_common(sweep, o);
    sweep->add_option("--ckpt", ckpt, "model checkpoint")->required();

    CLI::App* probe = app.add_subcommand("probe", "feature-space margin probe");
    add_common(probe, o);
    probe->add_option("--ckpt", ckpt, "model checkpoint")->required();

    CLI::App* ablate = app.add_subcommand("ablate", "train and score tap subsets");
    add_common(ablate, o);
    ablate->add_option("--subsets", subsets_text,
                       "semicolon-separated tap subsets, e.g. 'none;0;1,2' (default: all)");

    CLI::App* repro = app.add_subcommand("repro", "end-to-end pipeline and consolidated report");
    add_common(repro, o);
    repro->add_option("--profile", profile, "tiny | desk");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? ps::kExitOk : ps::kExitConfig;
    }

    try {
        if (train->parsed()) return cmd_train(o);
        if (attack->parsed()) return cmd_attack(o, ckpt);
        if (eval->parsed()) return cmd_eval(o, ckpt, source_ckpt);
        if (transfer->parsed()) return cmd_transfer(o, ckpts);
        if (sweep->parsed()) return cmd_sweep(o, ckpt);
        if (probe->parsed()) return cmd_probe(o, ckpt);
        if (ablate->parsed()) return cmd_ablate(o, subsets_text);
        if (repro->parsed()) return cmd_repro(o, profile);
        std::fprintf(stderr, "no command given\n");
        return ps::kExitConfig;
    } catch (const ps::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return ps::kExitConfig;
    } catch (const ps::FormatError& e) {
        std::fprintf(stderr, "input format error: %s\n", e.what());
        return ps::kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return ps::kExitRuntime;
    }
}
