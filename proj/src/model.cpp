#include "protoshield/model.hpp"

#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "protoshield/rng.hpp"
#include "protoshield/serialize.hpp"

namespace protoshield {

namespace {

struct ShapeCursor {
    // Either a spatial {c, h, w} shape or a flat width.
    int64_t c = 0, h = 0, w = 0;
    int64_t flat = 0;
    bool spatial() const { return flat == 0; }
};

ShapeCursor step_shape(const ShapeCursor& in, const LayerSpec& l, const std::string& name) {
    ShapeCursor out = in;
    switch (l.kind) {
        case LayerKind::conv: {
            if (!in.spatial()) throw ConfigError(name + ": conv after flatten");
            int64_t eh = in.h + 2 * l.pad, ew = in.w + 2 * l.pad;
            if (l.ksize > eh || l.ksize > ew) throw ConfigError(name + ": conv kernel exceeds input");
            if ((eh - l.ksize) % l.stride || (ew - l.ksize) % l.stride)
                throw ConfigError(name + ": conv output size not integral");
            out.c = l.out;
            out.h = (eh - l.ksize) / l.stride + 1;
            out.w = (ew - l.ksize) / l.stride + 1;
            break;
        }
        case LayerKind::prelu:
        case LayerKind::relu:
            break;
        case LayerKind::maxpool:
            if (!in.spatial()) throw ConfigError(name + ": pool after flatten");
            out.h = in.h / 2;
            out.w = in.w / 2;
            if (out.h == 0 || out.w == 0) throw ConfigError(name + ": pooled feature map vanished");
            break;
        case LayerKind::flatten:
            if (!in.spatial()) throw ConfigError(name + ": flatten twice");
            out = {};
            out.flat = in.c * in.h * in.w;
            break;
        case LayerKind::fc:
            if (in.spatial()) throw ConfigError(name + ": fc requires flatten first");
            out.flat = l.out;
            break;
    }
    return out;
}

}  // namespace

void ModelSpec::validate() const {
    if (input_shape.size() != 3) throw ConfigError(name + ": input_shape must be {C,H,W}");
    if (num_classes < 2) throw ConfigError(name + ": num_classes must be >= 2");
    if (layers.empty()) throw ConfigError(name + ": no layers");
    ShapeCursor cur{input_shape[0], input_shape[1], input_shape[2], 0};
    for (const LayerSpec& l : layers) cur = step_shape(cur, l, name);
    if (cur.spatial() || cur.flat != num_classes)
        throw ConfigError(name + ": final layer width " + std::to_string(cur.flat) +
                          " does not equal num_classes " + std::to_string(num_classes));
    int prev = -1;
    for (const TapSpec& t : taps) {
        if (t.layer_index <= prev) throw ConfigError(name + ": tap indices must be strictly increasing");
        if (t.layer_index < 0 || t.layer_index >= int(layers.size()))
            throw ConfigError(name + ": tap index " + std::to_string(t.layer_index) + " out of range");
        prev = t.layer_index;
    }
}

std::vector<int64_t> ModelSpec::tap_dims() const {
    std::vector<int64_t> dims;
    ShapeCursor cur{input_shape[0], input_shape[1], input_shape[2], 0};
    size_t ti = 0;
    for (size_t i = 0; i < layers.size() && ti < taps.size(); ++i) {
        cur = step_shape(cur, layers[i], name);
        if (taps[ti].layer_index == int(i)) {
            if (taps[ti].aux == AuxKind::gap) {
                if (!cur.spatial()) throw ConfigError(name + ": gap tap on flat features");
                dims.push_back(cur.c);
            } else {
                if (cur.spatial()) throw ConfigError(name + ": identity tap on spatial features");
                dims.push_back(cur.flat);
            }
            ++ti;
        }
    }
    if (ti != taps.size()) throw ConfigError(name + ": unresolved tap");
    return dims;
}

int64_t ModelSpec::param_count() const {
    int64_t count = 0;
    ShapeCursor cur{input_shape[0], input_shape[1], input_shape[2], 0};
    for (const LayerSpec& l : layers) {
        if (l.kind == LayerKind::conv)
            count += int64_t(l.out) * cur.c * l.ksize * l.ksize + l.out;
        else if (l.kind == LayerKind::fc)
            count += int64_t(l.out) * cur.flat + l.out;
        else if (l.kind == LayerKind::prelu)
            count += 1;
        cur = step_shape(cur, l, name);
    }
    return count;
}

ModelSpec ModelSpec::cnn6(bool tiny, int num_classes, std::vector<int64_t> input_shape) {
    ModelSpec s;
    s.name = tiny ? "cnn6-tiny" : "cnn6";
    s.input_shape = std::move(input_shape);
    s.num_classes = num_classes;
    int c1 = tiny ? 16 : 32, c2 = tiny ? 32 : 64, c3 = tiny ? 64 : 128;
    int f1 = tiny ? 256 : 512, f2 = tiny ? 32 : 64;
    auto conv = [](int out) { return LayerSpec{LayerKind::conv, out, 5, 1, 2}; };
    auto act = [] { return LayerSpec{LayerKind::prelu}; };
    auto pool = [] { return LayerSpec{LayerKind::maxpool}; };
    for (int c : {c1, c2, c3}) {
        s.layers.push_back(conv(c));
        s.layers.push_back(act());
        s.layers.push_back(conv(c));
        s.layers.push_back(act());
        s.layers.push_back(pool());
    }
    int pool3 = int(s.layers.size()) - 1;
    s.layers.push_back({LayerKind::flatten});
    s.layers.push_back({LayerKind::fc, f1});
    s.layers.push_back(act());
    int fc1_act = int(s.layers.size()) - 1;
    s.layers.push_back({LayerKind::fc, f2});
    s.layers.push_back(act());
    int fc2_act = int(s.layers.size()) - 1;
    s.layers.push_back({LayerKind::fc, num_classes});
    s.taps = {{pool3, AuxKind::gap}, {fc1_act, AuxKind::identity}, {fc2_act, AuxKind::identity}};
    return s;
}

ModelSpec ModelSpec::source_net(int num_classes, std::vector<int64_t> input_shape) {
    // Shallower two-stage net with 3x3 kernels; shares no shape with cnn6.
    // prelu rather than relu so near-constant inputs cannot silence a class.
    ModelSpec s;
    s.name = "source-net";
    s.input_shape = std::move(input_shape);
    s.num_classes = num_classes;
    s.layers = {
        {LayerKind::conv, 24, 3, 1, 1}, {LayerKind::prelu}, {LayerKind::maxpool},
        {LayerKind::conv, 48, 3, 1, 1}, {LayerKind::prelu}, {LayerKind::maxpool},
        {LayerKind::flatten},           {LayerKind::fc, 128}, {LayerKind::prelu},
        {LayerKind::fc, num_classes},
    };
    return s;
}

ModelSpec ModelSpec::by_name(const std::string& profile, int num_classes,
                             std::vector<int64_t> input_shape) {
    if (profile == "cnn6") return cnn6(false, num_classes, std::move(input_shape));
    if (profile == "cnn6-tiny") return cnn6(true, num_classes, std::move(input_shape));
    if (profile == "source-net") return source_net(num_classes, std::move(input_shape));
    throw ConfigError("unknown model profile '" + profile + "'");
}

namespace {

nlohmann::json layer_to_json(const LayerSpec& l) {
    static const char* names[] = {"conv", "prelu", "relu", "maxpool", "flatten", "fc"};
    nlohmann::json j{{"kind", names[int(l.kind)]}};
    if (l.kind == LayerKind::conv) {
        j["out"] = l.out;
        j["ksize"] = l.ksize;
        j["stride"] = l.stride;
        j["pad"] = l.pad;
    } else if (l.kind == LayerKind::fc) {
        j["out"] = l.out;
    }
    return j;
}

LayerSpec layer_from_json(const nlohmann::json& j) {
    std::string kind = j.at("kind");
    LayerSpec l;
    if (kind == "conv")
        l = {LayerKind::conv, j.at("out"), j.at("ksize"), j.at("stride"), j.at("pad")};
    else if (kind == "prelu")
        l = {LayerKind::prelu};
    else if (kind == "relu")
        l = {LayerKind::relu};
    else if (kind == "maxpool")
        l = {LayerKind::maxpool};
    else if (kind == "flatten")
        l = {LayerKind::flatten};
    else if (kind == "fc")
        l = {LayerKind::fc, j.at("out")};
    else
        throw FormatError("unknown layer kind '" + kind + "'");
    return l;
}

}  // namespace

std::string ModelSpec::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["input_shape"] = input_shape;
    j["num_classes"] = num_classes;
    for (const LayerSpec& l : layers) j["layers"].push_back(layer_to_json(l));
    j["taps"] = nlohmann::json::array();
    for (const TapSpec& t : taps)
        j["taps"].push_back({{"layer", t.layer_index}, {"aux", t.aux == AuxKind::gap ? "gap" : "identity"}});
    return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
    ModelSpec s;
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        s.name = j.at("name");
        s.input_shape = j.at("input_shape").get<std::vector<int64_t>>();
        s.num_classes = j.at("num_classes");
        for (const auto& lj : j.value("layers", nlohmann::json::array()))
            s.layers.push_back(layer_from_json(lj));
        for (const auto& tj : j.value("taps", nlohmann::json::array()))
            s.taps.push_back({tj.at("layer"), tj.at("aux") == "gap" ? AuxKind::gap : AuxKind::identity});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model spec json: ") + e.what());
    }
    s.validate();
    return s;
}

Model build_model(const ModelSpec& spec, uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    Rng rng(seed, Stream::params);
    auto normal_tensor = [&](std::vector<int64_t> shape, double stddev) {
        Tensor t = Tensor::zeros(std::move(shape), true);
        double* d = t.data();
        for (int64_t i = 0; i < t.numel(); ++i) d[i] = stddev * rng.normal();
        return t;
    };
    ShapeCursor cur{spec.input_shape[0], spec.input_shape[1], spec.input_shape[2], 0};
    for (const LayerSpec& l : spec.layers) {
        std::vector<Tensor> group;
        if (l.kind == LayerKind::conv) {
            int64_t fan_in = cur.c * l.ksize * l.ksize;
            group.push_back(normal_tensor({l.out, cur.c, l.ksize, l.ksize}, std::sqrt(2.0 / fan_in)));
            group.push_back(Tensor::zeros({l.out}, true));
        } else if (l.kind == LayerKind::fc) {
            group.push_back(normal_tensor({l.out, cur.flat}, std::sqrt(2.0 / cur.flat)));
            group.push_back(Tensor::zeros({l.out}, true));
        } else if (l.kind == LayerKind::prelu) {
            group.push_back(Tensor::full({1}, 0.25, true));
        }
        m.layer_params.push_back(std::move(group));
        cur = step_shape(cur, l, spec.name);
    }
    return m;
}

Model::ForwardOut Model::forward(const Tensor& x, Tape* tape) const {
    if (x.rank() != 4 || x.dim(1) != spec.input_shape[0] || x.dim(2) != spec.input_shape[1] ||
        x.dim(3) != spec.input_shape[2])
        throw ConfigError(spec.name + ": input " + x.shape_str() + " does not match spec");
    ForwardOut out;
    Tensor cur = x;
    size_t ti = 0;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        const auto& p = layer_params[i];
        switch (l.kind) {
            case LayerKind::conv:
                cur = channel_bias(conv2d(cur, p[0], l.stride, l.pad, tape), p[1], tape);
                break;
            case LayerKind::prelu:
                cur = prelu(cur, p[0], tape);
                break;
            case LayerKind::relu:
                cur = relu(cur, tape);
                break;
            case LayerKind::maxpool:
                cur = max_pool2d(cur, tape);
                break;
            case LayerKind::flatten:
                cur = reshape(cur, {cur.dim(0), cur.numel() / cur.dim(0)}, tape);
                break;
            case LayerKind::fc:
                cur = linear(cur, p[0], p[1], tape);
                break;
        }
        if (ti < spec.taps.size() && spec.taps[ti].layer_index == int(i)) {
            out.taps.push_back(spec.taps[ti].aux == AuxKind::gap ? global_avg_pool(cur, tape) : cur);
            ++ti;
        }
    }
    out.logits = cur;
    return out;
}

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out;
    for (const auto& group : layer_params)
        for (const Tensor& t : group) out.push_back(t);
    return out;
}

void Model::set_requires_grad(bool v) {
    for (auto& group : layer_params)
        for (Tensor& t : group) t.set_requires_grad(v);
}

double Model::param_checksum() const {
    // Order-sensitive FNV-style fold over raw bits; detects any mutation.
    uint64_t h = 1469598103934665603ULL;
    for (const auto& group : layer_params)
        for (const Tensor& t : group)
            for (int64_t i = 0; i < t.numel(); ++i) {
                uint64_t bits;
                std::memcpy(&bits, t.data() + i, 8);
                h = (h ^ bits) * 1099511628211ULL;
            }
    return double(h >> 11) * 0x1.0p-53;
}

std::vector<int> predict_softmax(const Model& model, const Tensor& x) {
    return predict_argmax(model.forward(x).logits);
}

ParamFreeze::ParamFreeze(std::vector<Tensor> params) : params_(std::move(params)) {
    saved_.reserve(params_.size());
    for (Tensor& t : params_) {
        saved_.push_back(t.requires_grad());
        t.set_requires_grad(false);
    }
}

ParamFreeze::~ParamFreeze() {
    for (size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(saved_[i]);
}

void save_checkpoint(const std::string& path, const Model& model,
                     const std::vector<PrototypeSet>& protos, const CheckpointMeta& meta) {
    nlohmann::json j;
    j["kind"] = "model";
    j["spec"] = nlohmann::json::parse(model.spec.to_json());
    j["seed"] = meta.seed;
    j["config_hash"] = meta.config_hash;
    j["variant"] = meta.variant;
    j["num_prototype_sets"] = protos.size();
    std::vector<Tensor> tensors = model.parameters();
    for (const PrototypeSet& p : protos) tensors.push_back(p.centroids);
    write_container(path, j.dump(), tensors);
}

Checkpoint load_checkpoint(const std::string& path) {
    Container c = read_container(path);
    nlohmann::json j = nlohmann::json::parse(c.json_descriptor);
    if (j.value("kind", "") != "model")
        throw FormatError("load_checkpoint: " + path + " is not a model container");
    Checkpoint out;
    out.model.spec = ModelSpec::from_json(j.at("spec").dump());
    out.meta.seed = j.value("seed", 0ULL);
    out.meta.config_hash = j.value("config_hash", "");
    out.meta.variant = j.value("variant", "");
    size_t nproto = j.value("num_prototype_sets", 0U);

    // Rebuild parameter groups in layer order and verify shapes.
    Model skeleton = build_model(out.model.spec, 0);
    size_t at = 0;
    for (auto& group : skeleton.layer_params) {
        std::vector<Tensor> loaded;
        for (Tensor& proto_t : group) {
            if (at >= c.tensors.size()) throw FormatError("load_checkpoint: missing tensors");
            Tensor t = c.tensors[at++];
            if (t.shape() != proto_t.shape())
                throw FormatError("load_checkpoint: tensor shape " + t.shape_str() +
                                  " does not match spec " + proto_t.shape_str());
            t.set_requires_grad(true);
            loaded.push_back(t);
        }
        out.model.layer_params.push_back(std::move(loaded));
    }
    out.model.spec = skeleton.spec;
    for (size_t i = 0; i < nproto; ++i) {
        if (at >= c.tensors.size()) throw FormatError("load_checkpoint: missing prototype tensors");
        Tensor t = c.tensors[at++];
        t.set_requires_grad(true);
        out.protos.push_back({t});
    }
    if (at != c.tensors.size()) throw FormatError("load_checkpoint: trailing tensors");
    return out;
}

}  // namespace protoshield
