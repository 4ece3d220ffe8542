#pragma once

#include <string>
#include <vector>

#include "protoshield/losses.hpp"
#include "protoshield/tensor.hpp"

namespace protoshield {

enum class LayerKind { conv, prelu, relu, maxpool, flatten, fc };

struct LayerSpec {
    LayerKind kind;
    int out = 0;     // conv filters / fc width
    int ksize = 0;   // conv kernel
    int stride = 1;
    int pad = 0;
};

enum class AuxKind { gap, identity };

struct TapSpec {
    int layer_index;  // feature taken after this layer runs
    AuxKind aux;      // gap for spatial features, identity for fc features
};

struct ModelSpec {
    std::string name;
    std::vector<int64_t> input_shape;  // {C, H, W}
    int num_classes = 10;
    std::vector<LayerSpec> layers;
    std::vector<TapSpec> taps;

    void validate() const;
    // Feature dimension produced at each tap, from static shape propagation.
    std::vector<int64_t> tap_dims() const;
    int64_t param_count() const;

    // Three-stage 5x5 CNN: [conv,prelu]x2 + pool per stage, then two hidden
    // fc layers; taps at the stage-3 GAP and both hidden fc outputs.
    static ModelSpec cnn6(bool tiny, int num_classes = 10,
                          std::vector<int64_t> input_shape = {1, 28, 28});
    // Smaller, differently shaped CE-only net used as the black-box source.
    static ModelSpec source_net(int num_classes = 10, std::vector<int64_t> input_shape = {1, 28, 28});
    static ModelSpec by_name(const std::string& profile, int num_classes = 10,
                             std::vector<int64_t> input_shape = {1, 28, 28});

    std::string to_json() const;
    static ModelSpec from_json(const std::string& text);
};

struct Model {
    ModelSpec spec;
    // One parameter group per layer: conv {w, b}, fc {w, b}, prelu {slope}.
    std::vector<std::vector<Tensor>> layer_params;

    struct ForwardOut {
        Tensor logits;
        std::vector<Tensor> taps;
    };
    ForwardOut forward(const Tensor& x, Tape* tape = nullptr) const;

    std::vector<Tensor> parameters() const;
    void set_requires_grad(bool v);
    double param_checksum() const;
};

Model build_model(const ModelSpec& spec, uint64_t seed);

std::vector<int> predict_softmax(const Model& model, const Tensor& x);

// Temporarily drops requires_grad on a parameter set, e.g. while an attack
// differentiates w.r.t. the input only.
class ParamFreeze {
public:
    explicit ParamFreeze(std::vector<Tensor> params);
    ~ParamFreeze();
    ParamFreeze(const ParamFreeze&) = delete;
    ParamFreeze& operator=(const ParamFreeze&) = delete;

private:
    std::vector<Tensor> params_;
    std::vector<bool> saved_;
};

struct CheckpointMeta {
    uint64_t seed = 0;
    std::string config_hash;
    std::string variant;
};

void save_checkpoint(const std::string& path, const Model& model,
                     const std::vector<PrototypeSet>& protos, const CheckpointMeta& meta);

struct Checkpoint {
    Model model;
    std::vector<PrototypeSet> protos;
    CheckpointMeta meta;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace protoshield
