#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "protoshield/config.hpp"
#include "protoshield/eval.hpp"
#include "protoshield/train.hpp"
#include "test_util.hpp"

using namespace protoshield;

namespace {

ModelSpec eval_spec(int k = 3) {
    ModelSpec s;
    s.name = "evalnet";
    s.input_shape = {1, 8, 8};
    s.num_classes = k;
    s.layers = {
        {LayerKind::conv, 4, 3, 1, 1},
        {LayerKind::prelu},
        {LayerKind::maxpool},
        {LayerKind::flatten},
        {LayerKind::fc, 12},
        {LayerKind::prelu},
        {LayerKind::fc, k},
    };
    s.taps = {{2, AuxKind::gap}, {5, AuxKind::identity}};
    return s;
}

struct Rig {
    Model model;
    std::vector<PrototypeSet> protos;
    Dataset data;

    EvalTarget target(const std::string& name = "m") const {
        return {&model, &protos, name};
    }
};

Rig make_rig(uint64_t seed = 3, int n_per_class = 8, int k = 3) {
    Rig r{build_model(eval_spec(k), seed), {},
          synth_blobs(k, n_per_class, {1, 8, 8}, 0.08, seed)};
    Rng rng(seed, Stream::protos);
    for (int64_t d : r.model.spec.tap_dims()) r.protos.push_back(make_prototypes(k, d, rng));
    return r;
}

AttackConfig quick_attack(AttackKind kind, double eps) {
    AttackConfig c;
    c.kind = kind;
    c.epsilon = eps;
    c.steps = 3;
    return c;
}

}  // namespace

TEST_CASE("setting names round-trip") {
    CHECK(setting_name(EvalSetting::white) == "white");
    CHECK(setting_name(EvalSetting::black) == "black");
    CHECK(setting_name(EvalSetting::adaptive) == "adaptive");
    CHECK((setting_from_name("black") == EvalSetting::black));
    CHECK_THROWS_AS(setting_from_name("gray"), ConfigError);
}

TEST_CASE("zero-budget attacks reproduce the clean row") {
    Rig r = make_rig();
    EvalReport report;
    evaluate_robustness(r.target(), r.data,
                        {quick_attack(AttackKind::fgsm, 0.0), quick_attack(AttackKind::pgd, 0.0)},
                        EvalSetting::white, 99, report);

    REQUIRE(report.rows.size() == 3);
    CHECK(report.rows[0].attack == "none");
    CHECK(report.rows[0].setting == "clean");
    CHECK(report.rows[0].n == r.data.size());
    CHECK(report.rows[1].accuracy == report.rows[0].accuracy);
    CHECK(report.rows[2].accuracy == report.rows[0].accuracy);
    CHECK(report.rows[1].setting == "white");
    CHECK(report.rows[1].variant == "m");

    double clean = clean_accuracy(r.target(), r.data);
    CHECK(report.rows[0].accuracy == clean);
}

TEST_CASE("repeated evaluation is deterministic row by row") {
    Rig r = make_rig();
    EvalReport a, b;
    std::vector<AttackConfig> attacks = {quick_attack(AttackKind::pgd, 0.1),
                                         quick_attack(AttackKind::fgsm, 0.1)};
    evaluate_robustness(r.target(), r.data, attacks, EvalSetting::white, 7, a);
    evaluate_robustness(r.target(), r.data, attacks, EvalSetting::white, 7, b);
    REQUIRE(a.rows.size() == b.rows.size());
    for (size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].accuracy == b.rows[i].accuracy);
        CHECK(a.rows[i].attack == b.rows[i].attack);
    }

    EvalReport c;
    evaluate_robustness(r.target(), r.data, attacks, EvalSetting::white, 8, c);
    CHECK(c.rows[1].accuracy != a.rows[1].accuracy);  // pgd draws move with the seed base
}

TEST_CASE("black box needs a source and adaptive needs prototypes") {
    Rig r = make_rig();
    EvalReport report;
    CHECK_THROWS_AS(evaluate_robustness(r.target(), r.data, {quick_attack(AttackKind::fgsm, 0.1)},
                                        EvalSetting::black, 1, report),
                    ConfigError);

    std::vector<PrototypeSet> none;
    EvalTarget bare{&r.model, &none, "bare"};
    CHECK_THROWS_AS(evaluate_robustness(bare, r.data, {quick_attack(AttackKind::fgsm, 0.1)},
                                        EvalSetting::adaptive, 1, report),
                    ConfigError);
    CHECK_THROWS_AS(clean_accuracy(bare, r.data, true), ConfigError);
}

TEST_CASE("black-box rows score source-crafted examples on the target") {
    Rig target = make_rig(3);
    Rig source = make_rig(4);
    EvalReport report;
    EvalTarget src = source.target("src");
    evaluate_robustness(target.target("tgt"), target.data,
                        {quick_attack(AttackKind::fgsm, 0.2)}, EvalSetting::black, 5, report,
                        &src);
    REQUIRE(report.rows.size() == 2);
    CHECK(report.rows[1].setting == "black");

    // The same examples crafted on the source, rescored on the target, agree.
    AttackConfig cfg = quick_attack(AttackKind::fgsm, 0.2);
    AdvBatch b = attack_dataset(source.model, source.protos, target.data, cfg, 256);
    rescore(b, target.model);
    double acc = 0;
    for (size_t i = 0; i < b.labels.size(); ++i) acc += b.adv_pred[i] == b.labels[i];
    acc /= double(b.labels.size());
    CHECK(report.rows[1].accuracy == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("prototype prediction flag changes the scored labels") {
    Rig r = make_rig();
    double soft = clean_accuracy(r.target(), r.data, false);
    double proto = clean_accuracy(r.target(), r.data, true);
    // Random centroids rarely agree with softmax heads; both are accuracies.
    CHECK(soft >= 0.0);
    CHECK(soft <= 1.0);
    CHECK(proto >= 0.0);
    CHECK(proto <= 1.0);

    std::vector<int> via_predict = predict(r.target(), r.data.images, true);
    Model::ForwardOut out = r.model.forward(r.data.images);
    CHECK(via_predict == predict_prototype(out.taps.back(), r.protos.back()));
}

TEST_CASE("transfer matrix has one row and column per target") {
    Rig a = make_rig(3);
    Rig b = make_rig(4);
    Rig c = make_rig(5);
    std::vector<EvalTarget> targets = {a.target("a"), b.target("b"), c.target("c")};

    AttackConfig cfg = quick_attack(AttackKind::bim, 0.15);  // deterministic per source
    TransferMatrix tm = transfer_matrix(targets, a.data, cfg, 17);
    CHECK(tm.names == std::vector<std::string>{"a", "b", "c"});
    REQUIRE(tm.accuracy.size() == 3);
    for (const auto& row : tm.accuracy) REQUIRE(row.size() == 3);
    CHECK(tm.attack == "bim");

    // Diagonal equals a direct white-box run of the same attack.
    AdvBatch direct = attack_dataset(b.model, b.protos, a.data, cfg, 256);
    double acc = 0;
    for (size_t i = 0; i < direct.labels.size(); ++i) acc += direct.adv_pred[i] == direct.labels[i];
    acc /= double(direct.labels.size());
    CHECK(tm.accuracy[1][1] == doctest::Approx(acc).epsilon(1e-12));

    CHECK_THROWS_AS(transfer_matrix({a.target("a")}, a.data, cfg, 17), ConfigError);
}

TEST_CASE("epsilon sweep walks the grid per kind") {
    Rig r = make_rig();
    AttackConfig base = quick_attack(AttackKind::fgsm, 0.3);
    std::vector<double> grid = {0.0, 0.1, 0.3};
    std::vector<SweepCurve> curves =
        epsilon_sweep(r.target(), r.data, {AttackKind::fgsm, AttackKind::pgd}, grid, base, 23);

    REQUIRE(curves.size() == 2);
    double clean = clean_accuracy(r.target(), r.data);
    for (const SweepCurve& c : curves) {
        CHECK(c.epsilons == grid);
        REQUIRE(c.accuracy.size() == grid.size());
        CHECK(c.accuracy[0] == clean);  // grid starts at zero
    }

    CHECK_THROWS_AS(epsilon_sweep(r.target(), r.data, {AttackKind::cw}, grid, base, 23),
                    ConfigError);
    CHECK_THROWS_AS(epsilon_sweep(r.target(), r.data, {AttackKind::fgsm}, {0.1, 0.2}, base, 23),
                    ConfigError);
    CHECK_THROWS_AS(epsilon_sweep(r.target(), r.data, {AttackKind::fgsm}, {0.0, 0.2, 0.1}, base, 23),
                    ConfigError);
}

TEST_CASE("margin probe geometry on controlled features") {
    Rig r = make_rig(6, 10);

    MarginProbe zero = margin_probe(r.target(), r.data, 0.0, 12, 20, 5);
    CHECK(zero.lambda_max == 0.0);
    CHECK(zero.m > 0.0);
    CHECK(!zero.overlap);
    CHECK(std::isinf(zero.ratio));

    MarginProbe probe = margin_probe(r.target(), r.data, 0.05, 12, 20, 5);
    CHECK(probe.lambda_max > 0.0);
    CHECK(probe.ratio == doctest::Approx(probe.m / (2.0 * probe.lambda_max)).epsilon(1e-12));
    CHECK(probe.lambda_per_class.size() == 3);
    CHECK(probe.n_samples == 12);
    CHECK(probe.n_draws == 20);

    MarginProbe again = margin_probe(r.target(), r.data, 0.05, 12, 20, 5);
    CHECK(again.lambda_max == probe.lambda_max);
    CHECK(again.m == probe.m);

    CHECK_THROWS_AS(margin_probe(r.target(), r.data, 0.05, 1, 20, 5), ConfigError);
    CHECK_THROWS_AS(margin_probe(r.target(), r.data, 0.05, 5000, 20, 5), ConfigError);
}

TEST_CASE("duplicate image under two labels forces overlap") {
    Rig r = make_rig();
    Tensor one = take_rows(r.data.images, {0});
    Tensor pair = concat0({one, one});
    Dataset twisted;
    twisted.images = pair;
    twisted.labels = {0, 1};
    twisted.num_classes = 2;

    MarginProbe probe = margin_probe(r.target(), twisted, 0.02, 2, 5, 9);
    CHECK(probe.m == 0.0);
    CHECK(probe.overlap);

    Dataset mono;
    mono.images = pair;
    mono.labels = {1, 1};
    mono.num_classes = 2;
    CHECK_THROWS_AS(margin_probe(r.target(), mono, 0.02, 2, 5, 9), ConfigError);

    std::vector<PrototypeSet> none;
    EvalTarget bare{&r.model, &none, "bare"};
    MarginProbe ok = margin_probe(bare, r.data, 0.02, 6, 5, 9);  // probes need taps, not protos
    CHECK(ok.n_samples == 6);

    ModelSpec flat_spec = eval_spec();
    flat_spec.taps.clear();
    Model flat = build_model(flat_spec, 2);
    EvalTarget tapless{&flat, &none, "src"};
    CHECK_THROWS_AS(margin_probe(tapless, r.data, 0.02, 6, 5, 9), ConfigError);
}

TEST_CASE("evaluation never mutates the model") {
    Rig r = make_rig();
    double before = r.model.param_checksum();
    EvalReport report;
    evaluate_robustness(r.target(), r.data,
                        {quick_attack(AttackKind::mim, 0.1), quick_attack(AttackKind::pgd, 0.1)},
                        EvalSetting::adaptive, 3, report);
    margin_probe(r.target(), r.data, 0.05, 8, 10, 4);
    CHECK(r.model.param_checksum() == before);
}

TEST_CASE("layer ablation trains one model per tap subset") {
    Dataset train_data = synth_blobs(3, 12, {1, 8, 8}, 0.03, 31);
    Dataset eval_data = synth_blobs(3, 6, {1, 8, 8}, 0.03, 32);

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.warmup = 1;
    cfg.batch_size = 12;
    cfg.lr.base = 0.1;

    std::vector<AblationRow> rows =
        layer_ablation(eval_spec(), {{}, {0}, {0, 1}}, train_data, eval_data, cfg, 0.1, 77);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].label == "none");
    CHECK(rows[1].label == "t0");
    CHECK(rows[2].label == "t0+t1");
    for (const AblationRow& row : rows) {
        CHECK(row.clean >= 0.0);
        CHECK(row.clean <= 1.0);
        CHECK(row.fgsm <= row.clean + 1e-12);
    }

    // The empty subset anchors to plain cross-entropy training: same model,
    // same clean accuracy, reproduced independently.
    ModelSpec ce_spec = eval_spec();
    ce_spec.taps.clear();
    TrainConfig ce_cfg = cfg;
    ce_cfg.warmup = ce_cfg.epochs;
    ce_cfg.seed = 77;
    TrainResult ce = train(ce_spec, train_data, ce_cfg);
    std::vector<PrototypeSet> none;
    EvalTarget ce_target{&ce.model, &none, "ce"};
    CHECK(rows[0].clean == clean_accuracy(ce_target, eval_data));

    CHECK_THROWS_AS(layer_ablation(eval_spec(), {{0, 5}}, train_data, eval_data, cfg, 0.1, 77),
                    ConfigError);
}

TEST_CASE("masking checklist passes healthy numbers and flags pathologies") {
    EvalReport report;
    auto row = [&report](const std::string& attack, const std::string& setting, double budget,
                         double acc) {
        report.rows.push_back({"Ours", attack, setting, budget, acc, 100});
    };
    row("none", "clean", 0.0, 0.95);
    row("fgsm", "white", 0.3, 0.50);
    row("bim", "white", 0.3, 0.40);
    row("pgd", "white", 0.3, 0.38);
    row("fgsm", "black", 0.3, 0.80);
    row("bim", "black", 0.3, 0.75);
    row("pgd", "black", 0.3, 0.70);

    std::vector<SweepCurve> curves(1);
    curves[0].kind = AttackKind::pgd;
    curves[0].epsilons = {0.0, 0.1, 0.3, 0.6};
    curves[0].accuracy = {0.95, 0.70, 0.38, 0.01};

    MaskingChecklist ok = masking_checklist(report, curves, 0.6);
    CHECK(ok.ok);
    REQUIRE(ok.items.size() == 4);
    for (const ChecklistItem& item : ok.items) CHECK(item.pass);

    // Iterative attacks weaker than fgsm signal obfuscated gradients.
    EvalReport bad1 = report;
    bad1.rows[2].accuracy = 0.60;
    CHECK(!masking_checklist(bad1, curves, 0.6).items[0].pass);

    // A black-box attack beating white box does too.
    EvalReport bad2 = report;
    bad2.rows[5].accuracy = 0.30;
    CHECK(!masking_checklist(bad2, curves, 0.6).items[1].pass);

    // Rising sweep accuracy.
    std::vector<SweepCurve> rising = curves;
    rising[0].accuracy = {0.95, 0.70, 0.80, 0.01};
    CHECK(!masking_checklist(report, rising, 0.6).items[2].pass);

    // No collapse at the high-epsilon point.
    std::vector<SweepCurve> tough = curves;
    tough[0].accuracy = {0.95, 0.70, 0.38, 0.20};
    MaskingChecklist failed = masking_checklist(report, tough, 0.6);
    CHECK(!failed.items[3].pass);
    CHECK(!failed.ok);

    // The strict black-box comparison can be relaxed explicitly.
    MaskingChecklist slack = masking_checklist(bad2, curves, 0.6, 0.02, 0.05, 0.5);
    CHECK(slack.items[1].pass);

    std::ostringstream os;
    format_checklist_text(os, failed);
    CHECK(os.str().find("FAIL accuracy_collapses_at_high_eps") != std::string::npos);
    CHECK(os.str().find("FAIL masking_checklist_overall") != std::string::npos);
}

TEST_CASE("report writers emit the documented columns") {
    std::string dir = testutil::scratch_dir("eval-write");
    Rig r = make_rig();
    EvalReport report;
    evaluate_robustness(r.target("Ours"), r.data,
                        {quick_attack(AttackKind::fgsm, 0.1), quick_attack(AttackKind::cw, 0.0)},
                        EvalSetting::white, 3, report);

    std::string header = report_header(0x00ff00ff00ff00ffULL, 42);
    CHECK(header.find("# protoshield") == 0);
    CHECK(header.find("config=00ff00ff00ff00ff") != std::string::npos);
    CHECK(header.find("seed=42") != std::string::npos);

    write_report_csv(dir + "/report.csv", report, header);
    std::string csv = testutil::read_file(dir + "/report.csv");
    CHECK(csv.find(header) == 0);
    CHECK(csv.find("variant,attack,setting,budget,accuracy,n") != std::string::npos);
    CHECK(csv.find("Ours,fgsm,white") != std::string::npos);

    write_report_text(dir + "/report.txt", report, header);
    std::string text = testutil::read_file(dir + "/report.txt");
    CHECK(text.find("== white ==") != std::string::npos);
    CHECK(text.find("C&W") != std::string::npos);
    CHECK(text.find("FGSM") != std::string::npos);

    AttackConfig bim = quick_attack(AttackKind::bim, 0.15);
    TransferMatrix tm = transfer_matrix({r.target("a"), r.target("b")}, r.data, bim, 5);
    write_transfer_csv(dir + "/transfer.csv", tm, header);
    std::string tcsv = testutil::read_file(dir + "/transfer.csv");
    CHECK(tcsv.find("source,target,attack,budget,accuracy") != std::string::npos);
    CHECK(tcsv.find("a,b,bim") != std::string::npos);

    std::vector<SweepCurve> curves =
        epsilon_sweep(r.target(), r.data, {AttackKind::fgsm}, {0.0, 0.1}, bim, 9);
    write_sweep_csv(dir + "/sweep.csv", curves, header);
    CHECK(testutil::read_file(dir + "/sweep.csv").find("attack,epsilon,accuracy") !=
          std::string::npos);

    MarginProbe probe = margin_probe(r.target(), r.data, 0.05, 8, 5, 3);
    write_probe_csv(dir + "/probe.csv", probe, header);
    std::string pcsv = testutil::read_file(dir + "/probe.csv");
    CHECK(pcsv.find("metric,value") != std::string::npos);
    CHECK(pcsv.find("lambda_max") != std::string::npos);

    std::vector<AblationRow> rows = {{{0}, "t0", 0.9, 0.5, 0.4}};
    write_ablation_csv(dir + "/ablation.csv", rows, header);
    CHECK(testutil::read_file(dir + "/ablation.csv").find("taps,clean,fgsm,pgd") !=
          std::string::npos);
}
