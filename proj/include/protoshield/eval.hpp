#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "protoshield/attacks.hpp"
#include "protoshield/data.hpp"
#include "protoshield/losses.hpp"
#include "protoshield/model.hpp"
#include "protoshield/train.hpp"

namespace protoshield {

// Threat settings. "white" attacks the evaluated model directly, "black"
// crafts examples on an independently trained source model of a different
// architecture, "adaptive" is white-box with the attack differentiating the
// full training objective instead of plain cross entropy.
enum class EvalSetting { white, black, adaptive };

std::string setting_name(EvalSetting s);
EvalSetting setting_from_name(const std::string& name);

// One accuracy measurement. budget holds epsilon for budget-bounded attacks
// and the trade-off constant c for cw. n is the number of evaluated samples.
struct EvalRow {
    std::string variant;
    std::string attack;   // "none" for clean accuracy
    std::string setting;  // "clean", "white", "black", or "adaptive"
    double budget = 0.0;
    double accuracy = 0.0;
    int64_t n = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
};

// Model handle used throughout evaluation. The prototype list may be empty
// for models trained with cross entropy only; such models cannot serve
// adaptive attacks or prototype predictions.
struct EvalTarget {
    const Model* model = nullptr;
    const std::vector<PrototypeSet>* protos = nullptr;
    std::string variant;
};

// Labels for a batch of inputs, chunked internally to bound memory. Softmax
// argmax by default; nearest centroid at the deepest tap when use_prototype.
std::vector<int> predict(const EvalTarget& target, const Tensor& x,
                         bool use_prototype, int64_t chunk = 256);

double clean_accuracy(const EvalTarget& target, const Dataset& data,
                      bool use_prototype = false);

// Runs each configured attack against the target under one setting and
// appends rows to the report, preceded by one clean row per variant. Black
// box requires a source target whose model generates the examples. Each row
// re-seeds its attack from seed_base and the row's position so any row can
// be reproduced in isolation.
void evaluate_robustness(const EvalTarget& target, const Dataset& data,
                         const std::vector<AttackConfig>& attacks,
                         EvalSetting setting, uint64_t seed_base, EvalReport& report,
                         const EvalTarget* source = nullptr, bool use_prototype = false,
                         int64_t batch_size = 256);

// Cross-model transferability. accuracy[s][t] is model t's accuracy on
// examples crafted against model s; the diagonal is the white-box result.
// Needs at least two targets.
struct TransferMatrix {
    std::vector<std::string> names;
    std::vector<std::vector<double>> accuracy;
    std::string attack;
    double budget = 0.0;
};

TransferMatrix transfer_matrix(const std::vector<EvalTarget>& targets, const Dataset& data,
                               const AttackConfig& attack, uint64_t seed_base,
                               int64_t batch_size = 256);

// Accuracy over an ascending epsilon grid per attack kind. The grid must
// start at zero so the first point doubles as a clean-accuracy check. cw is
// not epsilon-parameterised and is rejected.
struct SweepCurve {
    AttackKind kind = AttackKind::fgsm;
    std::vector<double> epsilons;
    std::vector<double> accuracy;
};

std::vector<SweepCurve> epsilon_sweep(const EvalTarget& target, const Dataset& data,
                                      const std::vector<AttackKind>& kinds,
                                      const std::vector<double>& grid,
                                      const AttackConfig& base, uint64_t seed_base,
                                      int64_t batch_size = 256);

// Feature-space margin probe at the deepest tap. Per probed sample, lambda
// is the largest feature displacement over n_draws perturbations drawn
// uniformly from the epsilon ball (no pixel clipping: the probe measures the
// network's geometry, not attack feasibility); per-class lambda is the max
// over that class's samples. m is the smallest feature distance between
// probed samples of different classes. Separation requires m > 2 * lambda.
struct MarginProbe {
    std::vector<double> lambda_per_class;
    double lambda_max = 0.0;
    double m = 0.0;
    double ratio = 0.0;  // m / (2 * lambda_max)
    bool overlap = false;
    double epsilon = 0.0;
    int n_samples = 0;
    int n_draws = 0;
};

MarginProbe margin_probe(const EvalTarget& target, const Dataset& data, double epsilon,
                         int n_samples, int n_draws, uint64_t seed);

// Trains one model per tap subset and reports clean, fgsm, and pgd accuracy
// at the given epsilon. Subsets index into full_spec.taps; the empty subset
// trains with cross entropy only and anchors the comparison.
struct AblationRow {
    std::vector<int> taps;
    std::string label;  // "none" or "t<i>+t<j>..."
    double clean = 0.0;
    double fgsm = 0.0;
    double pgd = 0.0;
};

std::vector<AblationRow> layer_ablation(const ModelSpec& full_spec,
                                        const std::vector<std::vector<int>>& subsets,
                                        const Dataset& train_data, const Dataset& eval_data,
                                        const TrainConfig& base_cfg, double epsilon,
                                        uint64_t seed);

// Gradient-masking checklist over a finished report and sweep:
//   - iterative attacks at least as strong as fgsm (white box),
//   - black box never stronger than white box per attack and budget,
//   - sweep accuracy non-increasing in epsilon,
//   - accuracy collapses once epsilon reaches high_eps.
// tol is accuracy slack on the 0..1 scale for the fgsm and sweep checks;
// the black-vs-white comparison has its own slack, strict by default.
struct ChecklistItem {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct MaskingChecklist {
    std::vector<ChecklistItem> items;
    bool ok = true;
};

MaskingChecklist masking_checklist(const EvalReport& report,
                                   const std::vector<SweepCurve>& curves, double high_eps,
                                   double tol = 0.02, double high_eps_ceiling = 0.05,
                                   double black_tol = 0.0);

// Report writers. Every output file starts with a provenance line carrying
// the tool version, the run's config hash, and its seed.
std::string report_header(uint64_t config_hash, uint64_t seed);

void write_report_csv(const std::string& path, const EvalReport& report,
                      const std::string& header);
void format_report_text(std::ostream& os, const EvalReport& report);
void write_report_text(const std::string& path, const EvalReport& report,
                       const std::string& header);

void write_transfer_csv(const std::string& path, const TransferMatrix& tm,
                        const std::string& header);
void format_transfer_text(std::ostream& os, const TransferMatrix& tm);

void write_sweep_csv(const std::string& path, const std::vector<SweepCurve>& curves,
                     const std::string& header);

void write_probe_csv(const std::string& path, const MarginProbe& probe,
                     const std::string& header);
void format_probe_text(std::ostream& os, const MarginProbe& probe);

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows,
                        const std::string& header);

void format_checklist_text(std::ostream& os, const MaskingChecklist& list);

}  // namespace protoshield
