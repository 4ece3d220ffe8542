#include "protoshield/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace protoshield {

namespace {

void check_labels(const std::vector<int>& labels, int64_t n, int64_t k, const char* op) {
    if (static_cast<int64_t>(labels.size()) != n)
        throw ConfigError(std::string(op) + ": got " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(n) + " rows");
    for (int y : labels)
        if (y < 0 || y >= k)
            throw FormatError(std::string(op) + ": label " + std::to_string(y) +
                              " outside [0, " + std::to_string(k) + ")");
}

}  // namespace

PrototypeSet make_prototypes(int64_t num_classes, int64_t dim, Rng& rng) {
    Tensor c = Tensor::zeros({num_classes, dim}, true);
    double* d = c.data();
    for (int64_t i = 0; i < c.numel(); ++i) d[i] = rng.normal();
    return {c};
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tape* tape) {
    if (logits.rank() != 2) throw ConfigError("cross_entropy: logits must be [N,k]");
    int64_t n = logits.dim(0), k = logits.dim(1);
    check_labels(labels, n, k, "cross_entropy");
    const double* z = logits.data();
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double* row = z + i * k;
        double m = row[0];
        for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
        double s = 0;
        for (int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
        acc += m + std::log(s) - row[labels[i]];
    }
    Tensor y = Tensor::scalar(acc / static_cast<double>(n));
    if (tape && logits.requires_grad()) {
        auto zi = logits.impl(), yi = y.impl();
        auto lab = labels;
        y.set_requires_grad(true);
        tape->record(y, [zi, yi, lab, n, k] {
            double g = yi->grad.empty() ? 0.0 : yi->grad[0];
            if (zi->grad.empty()) zi->grad.assign(zi->data.size(), 0.0);
            double gn = g / static_cast<double>(n);
            for (int64_t i = 0; i < n; ++i) {
                const double* row = zi->data.data() + i * k;
                double* grow = zi->grad.data() + i * k;
                double m = row[0];
                for (int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
                double s = 0;
                for (int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
                for (int64_t j = 0; j < k; ++j) grow[j] += gn * std::exp(row[j] - m) / s;
                grow[lab[i]] -= gn;
            }
        });
    }
    return y;
}

Tensor prototype_conformity(const Tensor& features, const std::vector<int>& labels,
                            const PrototypeSet& protos, Tape* tape) {
    if (features.rank() != 2) throw ConfigError("prototype_conformity: features must be [N,d]");
    const Tensor& w = protos.centroids;
    int64_t n = features.dim(0), d = features.dim(1), k = w.dim(0);
    if (k < 2) throw ConfigError("prototype_conformity: needs k >= 2 classes, got " + std::to_string(k));
    if (w.dim(1) != d)
        throw ConfigError("prototype_conformity: feature dim " + std::to_string(d) +
                          " vs centroid dim " + std::to_string(w.dim(1)));
    check_labels(labels, n, k, "prototype_conformity");

    auto dist = [d](const double* a, const double* b) {
        double s = 0;
        for (int64_t t = 0; t < d; ++t) {
            double diff = a[t] - b[t];
            s += diff * diff;
        }
        return std::sqrt(s);
    };

    const double* f = features.data();
    const double* wd = w.data();
    double inv = 1.0 / static_cast<double>(k - 1);
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        int y = labels[i];
        double pull = dist(f + i * d, wd + y * d);
        double push = 0;
        for (int64_t j = 0; j < k; ++j) {
            if (j == y) continue;
            push += dist(f + i * d, wd + j * d) + dist(wd + y * d, wd + j * d);
        }
        acc += pull - inv * push;
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(n));

    bool fg = features.requires_grad(), wg = w.requires_grad();
    if (tape && (fg || wg)) {
        auto fi = features.impl(), wi = w.impl(), oi = out.impl();
        auto lab = labels;
        out.set_requires_grad(true);
        tape->record(out, [fi, wi, oi, lab, n, d, k, inv, fg, wg] {
            double g = oi->grad.empty() ? 0.0 : oi->grad[0];
            double s = g / static_cast<double>(n);
            if (fg && fi->grad.empty()) fi->grad.assign(fi->data.size(), 0.0);
            if (wg && wi->grad.empty()) wi->grad.assign(wi->data.size(), 0.0);
            const double* f = fi->data.data();
            const double* wd = wi->data.data();
            // Unit direction (a-b)/||a-b||, clamped near coincident points.
            auto dir = [d](const double* a, const double* b, std::vector<double>& u) {
                double ss = 0;
                for (int64_t t = 0; t < d; ++t) {
                    u[t] = a[t] - b[t];
                    ss += u[t] * u[t];
                }
                double denom = std::max(std::sqrt(ss), 1e-6);
                for (int64_t t = 0; t < d; ++t) u[t] /= denom;
            };
            std::vector<double> u(d);
            for (int64_t i = 0; i < n; ++i) {
                int y = lab[i];
                dir(f + i * d, wd + y * d, u);
                if (fg)
                    for (int64_t t = 0; t < d; ++t) fi->grad[i * d + t] += s * u[t];
                if (wg)
                    for (int64_t t = 0; t < d; ++t) wi->grad[y * d + t] -= s * u[t];
                for (int64_t j = 0; j < k; ++j) {
                    if (j == y) continue;
                    dir(f + i * d, wd + j * d, u);
                    if (fg)
                        for (int64_t t = 0; t < d; ++t) fi->grad[i * d + t] -= s * inv * u[t];
                    if (wg)
                        for (int64_t t = 0; t < d; ++t) wi->grad[j * d + t] += s * inv * u[t];
                    if (wg) {
                        dir(wd + y * d, wd + j * d, u);
                        for (int64_t t = 0; t < d; ++t) {
                            wi->grad[y * d + t] -= s * inv * u[t];
                            wi->grad[j * d + t] += s * inv * u[t];
                        }
                    }
                }
            }
        });
    }
    return out;
}

LossBreakdown joint_loss(const Tensor& logits, const std::vector<Tensor>& taps,
                         const std::vector<int>& labels, const std::vector<PrototypeSet>& protos,
                         const std::vector<double>& pc_weights, Tape* tape) {
    if (taps.size() != protos.size())
        throw ConfigError("joint_loss: " + std::to_string(taps.size()) + " taps vs " +
                          std::to_string(protos.size()) + " prototype sets");
    if (!pc_weights.empty() && pc_weights.size() != taps.size())
        throw ConfigError("joint_loss: weight count does not match tap count");
    LossBreakdown out;
    out.ce = cross_entropy(logits, labels, tape);
    out.total = out.ce;
    for (size_t l = 0; l < taps.size(); ++l) {
        Tensor pc = prototype_conformity(taps[l], labels, protos[l], tape);
        double w = pc_weights.empty() ? 1.0 : pc_weights[l];
        if (w != 1.0) pc = mul_scalar(pc, w, tape);
        out.pc_per_tap.push_back(pc);
        out.total = add(out.total, pc, tape);
    }
    return out;
}

Tensor cw_margin(const Tensor& logits, const std::vector<int>& labels, double kappa, Tape* tape) {
    if (logits.rank() != 2) throw ConfigError("cw_margin: logits must be [N,k]");
    int64_t n = logits.dim(0), k = logits.dim(1);
    if (k < 2) throw ConfigError("cw_margin: needs k >= 2 classes");
    check_labels(labels, n, k, "cw_margin");
    Tensor y = Tensor::zeros({n});
    auto runner = std::make_shared<std::vector<int64_t>>(n);  // best wrong class per row
    const double* z = logits.data();
    double* yd = y.data();
    for (int64_t i = 0; i < n; ++i) {
        const double* row = z + i * k;
        int64_t best = labels[i] == 0 ? 1 : 0;
        for (int64_t j = 0; j < k; ++j)
            if (j != labels[i] && row[j] > row[best]) best = j;
        (*runner)[i] = best;
        yd[i] = std::max(row[labels[i]] - row[best], -kappa);
    }
    if (tape && logits.requires_grad()) {
        auto zi = logits.impl(), yi = y.impl();
        auto lab = labels;
        y.set_requires_grad(true);
        tape->record(y, [zi, yi, runner, lab, n, k, kappa] {
            if (yi->grad.empty()) return;
            if (zi->grad.empty()) zi->grad.assign(zi->data.size(), 0.0);
            for (int64_t i = 0; i < n; ++i) {
                if (yi->data[i] <= -kappa) continue;  // clamp active: zero slope
                double g = yi->grad[i];
                zi->grad[i * k + lab[i]] += g;
                zi->grad[i * k + (*runner)[i]] -= g;
            }
        });
    }
    return y;
}

std::vector<int> predict_prototype(const Tensor& deepest_features, const PrototypeSet& deepest) {
    int64_t n = deepest_features.dim(0), d = deepest_features.dim(1);
    const Tensor& w = deepest.centroids;
    if (w.dim(1) != d) throw ConfigError("predict_prototype: feature/centroid dim mismatch");
    int64_t k = w.dim(0);
    std::vector<int> out(n);
    const double* f = deepest_features.data();
    const double* wd = w.data();
    for (int64_t i = 0; i < n; ++i) {
        int64_t best = 0;
        double bv = 0;
        for (int64_t j = 0; j < k; ++j) {
            double s = 0;
            for (int64_t t = 0; t < d; ++t) {
                double diff = f[i * d + t] - wd[j * d + t];
                s += diff * diff;
            }
            if (j == 0 || s < bv) {  // strict: ties keep the lowest index
                bv = s;
                best = j;
            }
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

std::vector<int> predict_argmax(const Tensor& logits) {
    int64_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(n);
    for (int64_t i = 0; i < n; ++i) out[i] = static_cast<int>(argmax_row(logits.data() + i * k, k));
    return out;
}

}  // namespace protoshield
