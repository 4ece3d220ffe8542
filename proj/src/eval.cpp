#include "protoshield/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "protoshield/common.hpp"
#include "protoshield/rng.hpp"

namespace protoshield {
namespace {

const std::vector<PrototypeSet>& protos_of(const EvalTarget& t) {
    static const std::vector<PrototypeSet> empty;
    return t.protos ? *t.protos : empty;
}

double fraction_correct(const std::vector<int>& pred, const std::vector<int>& want) {
    if (pred.size() != want.size()) throw UsageError("prediction/label count mismatch");
    if (pred.empty()) return 0.0;
    int64_t hits = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == want[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// Stable per-row attack seed; folds the row's position so rows stay
// reproducible when a report is rebuilt prefix by prefix.
uint64_t row_seed(uint64_t base, uint64_t index) {
    return splitmix64(base ^ ((index + 1) * 0x9e3779b97f4a7c15ULL));
}

double budget_of(const AttackConfig& cfg) {
    return cfg.kind == AttackKind::cw ? cfg.c : cfg.epsilon;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    return os;
}

std::string display_attack(const std::string& attack) {
    if (attack == "none") return "clean";
    if (attack == "fgsm") return "FGSM";
    if (attack == "bim") return "BIM";
    if (attack == "mim") return "MIM";
    if (attack == "cw") return "C&W";
    if (attack == "pgd") return "PGD";
    return attack;
}

std::string fmt_g(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

}  // namespace

std::string setting_name(EvalSetting s) {
    switch (s) {
        case EvalSetting::white: return "white";
        case EvalSetting::black: return "black";
        case EvalSetting::adaptive: return "adaptive";
    }
    throw UsageError("bad EvalSetting");
}

EvalSetting setting_from_name(const std::string& name) {
    if (name == "white") return EvalSetting::white;
    if (name == "black") return EvalSetting::black;
    if (name == "adaptive") return EvalSetting::adaptive;
    throw ConfigError("unknown evaluation setting '" + name + "' (want white, black, or adaptive)");
}

std::vector<int> predict(const EvalTarget& target, const Tensor& x, bool use_prototype,
                         int64_t chunk) {
    if (!target.model) throw UsageError("predict: target model is null");
    if (use_prototype) {
        if (protos_of(target).empty())
            throw ConfigError("prototype prediction needs trained prototype sets");
        if (target.model->spec.taps.empty())
            throw ConfigError("prototype prediction needs a model with feature taps");
    }
    int64_t n = x.dim(0);
    std::vector<int> out;
    out.reserve(static_cast<size_t>(n));
    for (int64_t start = 0; start < n; start += chunk) {
        int64_t stop = std::min(n, start + chunk);
        std::vector<int64_t> rows(static_cast<size_t>(stop - start));
        std::iota(rows.begin(), rows.end(), start);
        Model::ForwardOut fwd = target.model->forward(take_rows(x, rows));
        std::vector<int> pred = use_prototype
                                    ? predict_prototype(fwd.taps.back(), protos_of(target).back())
                                    : predict_argmax(fwd.logits);
        out.insert(out.end(), pred.begin(), pred.end());
    }
    return out;
}

double clean_accuracy(const EvalTarget& target, const Dataset& data, bool use_prototype) {
    return fraction_correct(predict(target, data.images, use_prototype), data.labels);
}

void evaluate_robustness(const EvalTarget& target, const Dataset& data,
                         const std::vector<AttackConfig>& attacks, EvalSetting setting,
                         uint64_t seed_base, EvalReport& report, const EvalTarget* source,
                         bool use_prototype, int64_t batch_size) {
    if (!target.model) throw ConfigError("robustness evaluation: target model missing");
    if (data.size() == 0) throw ConfigError("robustness evaluation: empty dataset");
    if (setting == EvalSetting::black && (source == nullptr || source->model == nullptr))
        throw ConfigError("black-box evaluation needs a source model to craft examples");
    if (setting == EvalSetting::adaptive && protos_of(target).empty())
        throw ConfigError("adaptive evaluation needs prototype sets on the target");

    bool have_clean = false;
    for (const EvalRow& r : report.rows)
        if (r.variant == target.variant && r.setting == "clean") have_clean = true;
    if (!have_clean) {
        EvalRow row;
        row.variant = target.variant;
        row.attack = "none";
        row.setting = "clean";
        row.accuracy = clean_accuracy(target, data, use_prototype);
        row.n = data.size();
        report.rows.push_back(row);
    }

    for (const AttackConfig& base : attacks) {
        AttackConfig cfg = base;
        cfg.seed = row_seed(seed_base, report.rows.size());
        if (setting == EvalSetting::adaptive) cfg.loss_mode = LossMode::joint;
        const EvalTarget& gen = setting == EvalSetting::black ? *source : target;
        AdvBatch batch = attack_dataset(*gen.model, protos_of(gen), data, cfg, batch_size);

        EvalRow row;
        row.variant = target.variant;
        row.attack = attack_kind_name(cfg.kind);
        row.setting = setting_name(setting);
        row.budget = budget_of(cfg);
        row.accuracy = fraction_correct(predict(target, batch.x_adv, use_prototype), batch.labels);
        row.n = data.size();
        report.rows.push_back(row);
    }
}

TransferMatrix transfer_matrix(const std::vector<EvalTarget>& targets, const Dataset& data,
                               const AttackConfig& attack, uint64_t seed_base,
                               int64_t batch_size) {
    if (targets.size() < 2) throw ConfigError("transferability needs at least two models");
    for (const EvalTarget& t : targets)
        if (!t.model) throw ConfigError("transferability: null model for '" + t.variant + "'");

    TransferMatrix tm;
    tm.attack = attack_kind_name(attack.kind);
    tm.budget = budget_of(attack);
    for (const EvalTarget& t : targets) tm.names.push_back(t.variant);
    tm.accuracy.assign(targets.size(), std::vector<double>(targets.size(), 0.0));

    for (size_t s = 0; s < targets.size(); ++s) {
        AttackConfig cfg = attack;
        cfg.seed = row_seed(seed_base, s);
        AdvBatch batch = attack_dataset(*targets[s].model, protos_of(targets[s]), data, cfg,
                                        batch_size);
        for (size_t t = 0; t < targets.size(); ++t) {
            std::vector<int> pred = predict(targets[t], batch.x_adv, false);
            tm.accuracy[s][t] = fraction_correct(pred, batch.labels);
        }
    }
    return tm;
}

std::vector<SweepCurve> epsilon_sweep(const EvalTarget& target, const Dataset& data,
                                      const std::vector<AttackKind>& kinds,
                                      const std::vector<double>& grid, const AttackConfig& base,
                                      uint64_t seed_base, int64_t batch_size) {
    if (kinds.empty()) throw ConfigError("epsilon sweep: no attack kinds given");
    if (grid.empty() || grid.front() != 0.0)
        throw ConfigError("epsilon sweep grid must start at 0");
    for (size_t i = 1; i < grid.size(); ++i)
        if (grid[i] <= grid[i - 1]) throw ConfigError("epsilon sweep grid must be ascending");
    for (AttackKind k : kinds)
        if (k == AttackKind::cw)
            throw ConfigError("cw is not epsilon-bounded and cannot be swept over epsilon");

    std::vector<SweepCurve> curves;
    for (size_t ki = 0; ki < kinds.size(); ++ki) {
        SweepCurve curve;
        curve.kind = kinds[ki];
        for (size_t ei = 0; ei < grid.size(); ++ei) {
            AttackConfig cfg = base;
            cfg.kind = kinds[ki];
            cfg.epsilon = grid[ei];
            cfg.step_size = 0.0;  // re-derive from the swept epsilon
            cfg.seed = row_seed(seed_base, ki * 1000 + ei);
            AdvBatch batch = attack_dataset(*target.model, protos_of(target), data, cfg,
                                            batch_size);
            curve.epsilons.push_back(grid[ei]);
            curve.accuracy.push_back(fraction_correct(batch.adv_pred, batch.labels));
        }
        curves.push_back(std::move(curve));
    }
    return curves;
}

MarginProbe margin_probe(const EvalTarget& target, const Dataset& data, double epsilon,
                         int n_samples, int n_draws, uint64_t seed) {
    if (!target.model) throw ConfigError("margin probe: target model missing");
    if (target.model->spec.taps.empty())
        throw ConfigError("margin probe needs a model with feature taps");
    if (epsilon < 0) throw ConfigError("margin probe: epsilon must be >= 0");
    if (n_draws < 1) throw ConfigError("margin probe: need at least one draw");
    if (n_samples < 2 || n_samples > data.size())
        throw ConfigError("margin probe: sample count out of range");

    std::vector<int64_t> order(static_cast<size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    Rng pick(seed, Stream::probe, 0);
    pick.shuffle(order);
    order.resize(static_cast<size_t>(n_samples));

    std::set<int> classes;
    for (int64_t idx : order) classes.insert(data.labels[static_cast<size_t>(idx)]);
    if (classes.size() < 2)
        throw ConfigError("margin probe: drawn samples cover fewer than two classes");

    Tensor clean = take_rows(data.images, order);
    Model::ForwardOut fwd = target.model->forward(clean);
    Tensor feats = fwd.taps.back();  // [n_samples, dim]
    int64_t dim = feats.dim(1);

    std::vector<int64_t> img_shape = data.images.shape();
    int64_t pix = 1;
    for (size_t i = 1; i < img_shape.size(); ++i) pix *= img_shape[i];

    MarginProbe probe;
    probe.epsilon = epsilon;
    probe.n_samples = n_samples;
    probe.n_draws = n_draws;
    probe.lambda_per_class.assign(static_cast<size_t>(data.num_classes), 0.0);

    for (size_t si = 0; si < order.size(); ++si) {
        int64_t idx = order[si];
        // Perturbation batch for one anchor; seeded off the dataset row so the
        // draw does not depend on which other samples were picked.
        Rng draw(seed, Stream::probe, static_cast<uint64_t>(idx) + 1);
        std::vector<int64_t> pshape = img_shape;
        pshape[0] = n_draws;
        Tensor pert = Tensor::zeros(pshape);
        const double* x0 = data.images.data() + idx * pix;
        double* pd = pert.data();
        for (int d = 0; d < n_draws; ++d)
            for (int64_t j = 0; j < pix; ++j)
                pd[d * pix + j] = x0[j] + draw.uniform(-epsilon, epsilon);

        Tensor pfeats = target.model->forward(pert).taps.back();  // [n_draws, dim]
        const double* f0 = feats.data() + static_cast<int64_t>(si) * dim;
        double lam = 0.0;
        for (int d = 0; d < n_draws; ++d) {
            const double* fd = pfeats.data() + static_cast<int64_t>(d) * dim;
            double ssq = 0.0;
            for (int64_t j = 0; j < dim; ++j) {
                double diff = fd[j] - f0[j];
                ssq += diff * diff;
            }
            lam = std::max(lam, std::sqrt(ssq));
        }
        int cls = data.labels[static_cast<size_t>(idx)];
        probe.lambda_per_class[static_cast<size_t>(cls)] =
            std::max(probe.lambda_per_class[static_cast<size_t>(cls)], lam);
    }

    probe.m = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < order.size(); ++i) {
        for (size_t j = i + 1; j < order.size(); ++j) {
            if (data.labels[static_cast<size_t>(order[i])] ==
                data.labels[static_cast<size_t>(order[j])])
                continue;
            const double* fi = feats.data() + static_cast<int64_t>(i) * dim;
            const double* fj = feats.data() + static_cast<int64_t>(j) * dim;
            double ssq = 0.0;
            for (int64_t d = 0; d < dim; ++d) {
                double diff = fi[d] - fj[d];
                ssq += diff * diff;
            }
            probe.m = std::min(probe.m, std::sqrt(ssq));
        }
    }

    probe.lambda_max = *std::max_element(probe.lambda_per_class.begin(),
                                         probe.lambda_per_class.end());
    probe.overlap = probe.m <= 2.0 * probe.lambda_max;
    probe.ratio = probe.lambda_max > 0.0 ? probe.m / (2.0 * probe.lambda_max)
                                         : std::numeric_limits<double>::infinity();
    return probe;
}

std::vector<AblationRow> layer_ablation(const ModelSpec& full_spec,
                                        const std::vector<std::vector<int>>& subsets,
                                        const Dataset& train_data, const Dataset& eval_data,
                                        const TrainConfig& base_cfg, double epsilon,
                                        uint64_t seed) {
    if (subsets.empty()) throw ConfigError("ablation: no tap subsets given");
    std::vector<AblationRow> rows;
    for (size_t ri = 0; ri < subsets.size(); ++ri) {
        const std::vector<int>& subset = subsets[ri];
        std::set<int> seen;
        for (int t : subset) {
            if (t < 0 || t >= static_cast<int>(full_spec.taps.size()))
                throw ConfigError("ablation: tap index out of range");
            if (!seen.insert(t).second) throw ConfigError("ablation: duplicate tap index");
        }

        ModelSpec spec = full_spec;
        spec.taps.clear();
        std::vector<int> chosen(subset.begin(), subset.end());
        std::sort(chosen.begin(), chosen.end());
        for (int t : chosen) spec.taps.push_back(full_spec.taps[static_cast<size_t>(t)]);

        TrainConfig cfg = base_cfg;
        cfg.pc_weights.clear();
        cfg.seed = seed;  // same init across subsets isolates the tap choice
        if (spec.taps.empty()) cfg.warmup = cfg.epochs;
        TrainResult res = train(spec, train_data, cfg);

        AblationRow row;
        row.taps = chosen;
        if (chosen.empty()) {
            row.label = "none";
        } else {
            for (size_t i = 0; i < chosen.size(); ++i)
                row.label += (i ? "+t" : "t") + std::to_string(chosen[i]);
        }

        EvalTarget tgt{&res.model, &res.protos, row.label};
        row.clean = clean_accuracy(tgt, eval_data, false);
        for (AttackKind kind : {AttackKind::fgsm, AttackKind::pgd}) {
            AttackConfig acfg;
            acfg.kind = kind;
            acfg.epsilon = epsilon;
            acfg.seed = row_seed(seed, ri * 2 + (kind == AttackKind::pgd ? 1 : 0));
            AdvBatch batch = attack_dataset(res.model, res.protos, eval_data, acfg, 256);
            double acc = fraction_correct(batch.adv_pred, batch.labels);
            (kind == AttackKind::fgsm ? row.fgsm : row.pgd) = acc;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

MaskingChecklist masking_checklist(const EvalReport& report,
                                   const std::vector<SweepCurve>& curves, double high_eps,
                                   double tol, double high_eps_ceiling, double black_tol) {
    MaskingChecklist out;
    auto add = [&out](const std::string& name, bool pass, const std::string& detail) {
        out.items.push_back({name, pass, detail});
        out.ok = out.ok && pass;
    };
    auto find_row = [&report](const std::string& variant, const std::string& attack,
                              const std::string& setting, double budget) -> const EvalRow* {
        for (const EvalRow& r : report.rows)
            if (r.variant == variant && r.attack == attack && r.setting == setting &&
                std::fabs(r.budget - budget) < 1e-12)
                return &r;
        return nullptr;
    };

    {
        // Iterative attacks should do at least as well as single-step fgsm.
        bool any = false, pass = true;
        std::string detail = "no comparable fgsm/iterative white-box rows";
        double worst = -std::numeric_limits<double>::infinity();
        for (const EvalRow& r : report.rows) {
            if (r.setting != "white" || r.attack != "fgsm") continue;
            for (const char* it : {"bim", "mim", "pgd"}) {
                const EvalRow* other = find_row(r.variant, it, "white", r.budget);
                if (!other) continue;
                any = true;
                double gap = other->accuracy - r.accuracy;  // > 0 means iterative weaker
                if (gap > worst) {
                    worst = gap;
                    char buf[160];
                    std::snprintf(buf, sizeof(buf),
                                  "%s %.4f vs fgsm %.4f at eps %s (%s)", it, other->accuracy,
                                  r.accuracy, fmt_g(r.budget).c_str(), r.variant.c_str());
                    detail = buf;
                }
            }
        }
        add("iterative_at_least_single_step", any && pass && worst <= tol, detail);
    }

    {
        // Black box must not beat white box on the same attack and budget.
        bool any = false;
        std::string detail = "no paired white/black rows";
        double worst = -std::numeric_limits<double>::infinity();
        for (const EvalRow& r : report.rows) {
            if (r.setting != "black") continue;
            const EvalRow* white = find_row(r.variant, r.attack, "white", r.budget);
            if (!white) continue;
            any = true;
            double gap = white->accuracy - r.accuracy;  // > 0 means black stronger
            if (gap > worst) {
                worst = gap;
                char buf[160];
                std::snprintf(buf, sizeof(buf), "%s black %.4f vs white %.4f at eps %s (%s)",
                              r.attack.c_str(), r.accuracy, white->accuracy,
                              fmt_g(r.budget).c_str(), r.variant.c_str());
                detail = buf;
            }
        }
        add("black_box_no_stronger_than_white", any && worst <= black_tol, detail);
    }

    {
        bool any = false;
        std::string detail = "no sweep curves";
        double worst = -std::numeric_limits<double>::infinity();
        for (const SweepCurve& c : curves) {
            for (size_t i = 1; i < c.accuracy.size(); ++i) {
                any = true;
                double rise = c.accuracy[i] - c.accuracy[i - 1];
                if (rise > worst) {
                    worst = rise;
                    char buf[160];
                    std::snprintf(buf, sizeof(buf), "%s rises %+.4f at eps %s",
                                  attack_kind_name(c.kind), rise,
                                  fmt_g(c.epsilons[i]).c_str());
                    detail = buf;
                }
            }
        }
        add("sweep_accuracy_non_increasing", any && worst <= tol, detail);
    }

    {
        bool any = false, pass = true;
        std::string detail = "no curve reaches eps " + fmt_g(high_eps);
        for (const SweepCurve& c : curves) {
            for (size_t i = 0; i < c.epsilons.size(); ++i) {
                if (c.epsilons[i] + 1e-12 < high_eps) continue;
                any = true;
                if (c.accuracy[i] >= high_eps_ceiling) pass = false;
                char buf[160];
                std::snprintf(buf, sizeof(buf), "%s %.4f at eps %s (ceiling %.4f)",
                              attack_kind_name(c.kind), c.accuracy[i],
                              fmt_g(c.epsilons[i]).c_str(), high_eps_ceiling);
                detail = buf;
                break;
            }
        }
        add("accuracy_collapses_at_high_eps", any && pass, detail);
    }
    return out;
}

std::string report_header(uint64_t config_hash, uint64_t seed) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "# protoshield %s config=%016llx seed=%llu", kVersion,
                  static_cast<unsigned long long>(config_hash),
                  static_cast<unsigned long long>(seed));
    return buf;
}

void write_report_csv(const std::string& path, const EvalReport& report,
                      const std::string& header) {
    std::ofstream os = open_out(path);
    os << header << "\n";
    os << "variant,attack,setting,budget,accuracy,n\n";
    char buf[256];
    for (const EvalRow& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%.6f,%lld", r.variant.c_str(),
                      r.attack.c_str(), r.setting.c_str(), fmt_g(r.budget).c_str(), r.accuracy,
                      static_cast<long long>(r.n));
        os << buf << "\n";
    }
}

void format_report_text(std::ostream& os, const EvalReport& report) {
    std::vector<std::string> settings;
    for (const EvalRow& r : report.rows)
        if (std::find(settings.begin(), settings.end(), r.setting) == settings.end())
            settings.push_back(r.setting);

    for (const std::string& setting : settings) {
        // Column keys in first-seen order; budgets disambiguate duplicates.
        std::vector<std::pair<std::string, double>> cols;
        std::vector<std::string> variants;
        for (const EvalRow& r : report.rows) {
            if (r.setting != setting) continue;
            std::pair<std::string, double> key{r.attack, r.budget};
            if (std::find(cols.begin(), cols.end(), key) == cols.end()) cols.push_back(key);
            if (std::find(variants.begin(), variants.end(), r.variant) == variants.end())
                variants.push_back(r.variant);
        }
        std::vector<std::string> labels;
        for (const auto& [attack, budget] : cols) {
            bool dup = false;
            for (const auto& [a2, b2] : cols)
                if (a2 == attack && b2 != budget) dup = true;
            std::string label = display_attack(attack);
            if (dup) label += "@" + fmt_g(budget);
            labels.push_back(label);
        }

        size_t vwidth = 8;
        for (const std::string& v : variants) vwidth = std::max(vwidth, v.size());

        os << "== " << setting << " ==\n";
        os << std::string(vwidth, ' ');
        char buf[64];
        for (const std::string& label : labels) {
            std::snprintf(buf, sizeof(buf), "  %10s", label.c_str());
            os << buf;
        }
        os << "\n";
        for (const std::string& v : variants) {
            os << v << std::string(vwidth - v.size(), ' ');
            for (const auto& [attack, budget] : cols) {
                const EvalRow* hit = nullptr;
                for (const EvalRow& r : report.rows)
                    if (r.setting == setting && r.variant == v && r.attack == attack &&
                        r.budget == budget)
                        hit = &r;
                if (hit)
                    std::snprintf(buf, sizeof(buf), "  %9.2f%%", 100.0 * hit->accuracy);
                else
                    std::snprintf(buf, sizeof(buf), "  %10s", "-");
                os << buf;
            }
            os << "\n";
        }
        os << "\n";
    }
}

void write_report_text(const std::string& path, const EvalReport& report,
                       const std::string& header) {
    std::ofstream os = open_out(path);
    os << header << "\n\n";
    format_report_text(os, report);
}

void write_transfer_csv(const std::string& path, const TransferMatrix& tm,
                        const std::string& header) {
    std::ofstream os = open_out(path);
    os << header << "\n";
    os << "source,target,attack,budget,accuracy\n";
    char buf[256];
    for (size_t s = 0; s < tm.names.size(); ++s)
        for (size_t t = 0; t < tm.names.size(); ++t) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%.6f", tm.names[s].c_str(),
                          tm.names[t].c_str(), tm.attack.c_str(), fmt_g(tm.budget).c_str(),
                          tm.accuracy[s][t]);
            os << buf << "\n";
        }
}

void format_transfer_text(std::ostream& os, const TransferMatrix& tm) {
    os << "transfer accuracy, attack " << display_attack(tm.attack) << " budget "
       << fmt_g(tm.budget) << " (rows craft, columns evaluate)\n";
    size_t w = 10;
    for (const std::string& n : tm.names) w = std::max(w, n.size());
    os << std::string(w, ' ');
    char buf[96];
    for (const std::string& n : tm.names) {
        std::snprintf(buf, sizeof(buf), "  %*s", static_cast<int>(w), n.c_str());
        os << buf;
    }
    os << "\n";
    for (size_t s = 0; s < tm.names.size(); ++s) {
        os << tm.names[s] << std::string(w - tm.names[s].size(), ' ');
        for (size_t t = 0; t < tm.names.size(); ++t) {
            std::snprintf(buf, sizeof(buf), "  %*.2f%%", static_cast<int>(w - 1),
                          100.0 * tm.accuracy[s][t]);
            os << buf;
        }
        os << "\n";
    }
}

void write_sweep_csv(const std::string& path, const std::vector<SweepCurve>& curves,
                     const std::string& header) {
    std::ofstream os = open_out(path);
    os << header << "\n";
    os << "attack,epsilon,accuracy\n";
    char buf[128];
    for (const SweepCurve& c : curves)
        for (size_t i = 0; i < c.epsilons.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%.6f", attack_kind_name(c.kind),
                          fmt_g(c.epsilons[i]).c_str(), c.accuracy[i]);
            os << buf << "\n";
        }
}

void write_probe_csv(const std::string& path, const MarginProbe& probe,
                     const std::string& header) {
    std::ofstream os = open_out(path);
    os << header << "\n";
    os << "metric,value\n";
    for (size_t c = 0; c < probe.lambda_per_class.size(); ++c)
        os << "lambda_class_" << c << "," << fmt_g(probe.lambda_per_class[c]) << "\n";
    os << "lambda_max," << fmt_g(probe.lambda_max) << "\n";
    os << "m," << fmt_g(probe.m) << "\n";
    os << "ratio," << fmt_g(probe.ratio) << "\n";
    os << "overlap," << (probe.overlap ? 1 : 0) << "\n";
    os << "epsilon," << fmt_g(probe.epsilon) << "\n";
    os << "n_samples," << probe.n_samples << "\n";
    os << "n_draws," << probe.n_draws << "\n";
}

void format_probe_text(std::ostream& os, const MarginProbe& probe) {
    os << "margin probe: eps " << fmt_g(probe.epsilon) << ", " << probe.n_samples
       << " samples x " << probe.n_draws << " draws\n";
    for (size_t c = 0; c < probe.lambda_per_class.size(); ++c)
        os << "  lambda[" << c << "] = " << fmt_g(probe.lambda_per_class[c]) << "\n";
    os << "  lambda_max = " << fmt_g(probe.lambda_max) << "\n";
    os << "  min inter-class distance m = " << fmt_g(probe.m) << "\n";
    os << "  ratio m / (2 lambda_max) = " << fmt_g(probe.ratio) << "\n";
    os << "  verdict: " << (probe.overlap ? "OVERLAP (m <= 2 lambda_max)"
                                          : "SEPARATED (m > 2 lambda_max)")
       << "\n";
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows,
                        const std::string& header) {
    std::ofstream os = open_out(path);
    os << header << "\n";
    os << "taps,clean,fgsm,pgd\n";
    char buf[160];
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f", r.label.c_str(), r.clean, r.fgsm,
                      r.pgd);
        os << buf << "\n";
    }
}

void format_checklist_text(std::ostream& os, const MaskingChecklist& list) {
    for (const ChecklistItem& item : list.items)
        os << (item.pass ? "PASS" : "FAIL") << " " << item.name << ": " << item.detail << "\n";
    os << (list.ok ? "PASS" : "FAIL") << " masking_checklist_overall\n";
}

}  // namespace protoshield
