#pragma once

#include <vector>

#include "protoshield/rng.hpp"
#include "protoshield/tensor.hpp"

namespace protoshield {

// Trainable class centroids, one set per supervised tap depth.
struct PrototypeSet {
    Tensor centroids;  // [k, d], requires_grad
};

PrototypeSet make_prototypes(int64_t num_classes, int64_t dim, Rng& rng);

struct LossBreakdown {
    Tensor total;
    Tensor ce;
    std::vector<Tensor> pc_per_tap;
};

// Mean over the batch of -log softmax(logits)[label]; stable log-sum-exp.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tape* tape = nullptr);

// Mean over samples of
//   ||f_i - w_y|| - (1/(k-1)) * sum_{j != y} (||f_i - w_j|| + ||w_y - w_j||).
// Distances are exact euclidean norms; the backward pass clamps each norm
// denominator at 1e-6 so coincident points do not produce infinities.
Tensor prototype_conformity(const Tensor& features, const std::vector<int>& labels,
                            const PrototypeSet& protos, Tape* tape = nullptr);

// ce(logits) + sum over taps of weight * pc(tap features); weights default 1.
LossBreakdown joint_loss(const Tensor& logits, const std::vector<Tensor>& taps,
                         const std::vector<int>& labels, const std::vector<PrototypeSet>& protos,
                         const std::vector<double>& pc_weights, Tape* tape = nullptr);

// Per-sample margin max(Z_y - max_{j!=y} Z_j, -kappa); output shape [N].
Tensor cw_margin(const Tensor& logits, const std::vector<int>& labels, double kappa,
                 Tape* tape = nullptr);

// Nearest-centroid labels from the deepest tap's features; ties -> lowest.
std::vector<int> predict_prototype(const Tensor& deepest_features, const PrototypeSet& deepest);

// Argmax-of-logits labels; ties -> lowest.
std::vector<int> predict_argmax(const Tensor& logits);

}  // namespace protoshield
