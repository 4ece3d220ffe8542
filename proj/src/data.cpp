#include "protoshield/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "protoshield/rng.hpp"
#include "protoshield/serialize.hpp"

namespace protoshield {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return bytes;
}

std::vector<uint8_t> gunzip(const std::vector<uint8_t>& in) {
    z_stream strm{};
    if (inflateInit2(&strm, 15 + 32) != Z_OK)  // +32: auto-detect gzip/zlib headers
        throw std::runtime_error("zlib init failed");
    std::vector<uint8_t> out;
    std::vector<uint8_t> buf(1 << 16);
    strm.next_in = const_cast<Bytef*>(in.data());
    strm.avail_in = static_cast<uInt>(in.size());
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        strm.next_out = buf.data();
        strm.avail_out = static_cast<uInt>(buf.size());
        rc = inflate(&strm, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&strm);
            throw FormatError("gzip: corrupt stream (zlib rc " + std::to_string(rc) + ")");
        }
        out.insert(out.end(), buf.data(), buf.data() + (buf.size() - strm.avail_out));
    }
    inflateEnd(&strm);
    return out;
}

std::vector<uint8_t> read_maybe_gzip(const std::string& path) {
    std::vector<uint8_t> bytes = read_file(path);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes);
    return bytes;
}

struct ByteReader {
    const std::vector<uint8_t>& b;
    const std::string& path;
    size_t pos = 0;

    uint32_t u32be() {
        if (pos + 4 > b.size())
            throw FormatError("IDX: " + path + " truncated at byte " + std::to_string(pos));
        uint32_t v = (uint32_t(b[pos]) << 24) | (uint32_t(b[pos + 1]) << 16) |
                     (uint32_t(b[pos + 2]) << 8) | uint32_t(b[pos + 3]);
        pos += 4;
        return v;
    }

    const uint8_t* take(size_t n) {
        if (pos + n > b.size())
            throw FormatError("IDX: " + path + " ends " + std::to_string(pos + n - b.size()) +
                              " bytes short");
        const uint8_t* p = b.data() + pos;
        pos += n;
        return p;
    }
};

std::string hex32(uint32_t v) {
    std::ostringstream os;
    os << "0x" << std::hex << v;
    return os.str();
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::vector<uint8_t> ib = read_maybe_gzip(images_path);
    ByteReader ir{ib, images_path};
    uint32_t magic = ir.u32be();
    if (magic != 0x00000803)
        throw FormatError("IDX: " + images_path + " image magic mismatch: expected 0x803, got " +
                          hex32(magic));
    uint32_t n = ir.u32be(), rows = ir.u32be(), cols = ir.u32be();
    const uint8_t* px = ir.take(size_t(n) * rows * cols);

    std::vector<uint8_t> lb = read_maybe_gzip(labels_path);
    ByteReader lr{lb, labels_path};
    uint32_t lmagic = lr.u32be();
    if (lmagic != 0x00000801)
        throw FormatError("IDX: " + labels_path + " label magic mismatch: expected 0x801, got " +
                          hex32(lmagic));
    uint32_t ln = lr.u32be();
    if (ln != n)
        throw FormatError("IDX: " + std::to_string(n) + " images but " + std::to_string(ln) +
                          " labels");
    const uint8_t* lab = lr.take(ln);

    Dataset ds;
    ds.images = Tensor::zeros({int64_t(n), 1, int64_t(rows), int64_t(cols)});
    double* d = ds.images.data();
    size_t total = size_t(n) * rows * cols;
    for (size_t i = 0; i < total; ++i) d[i] = px[i] / 255.0;
    ds.labels.resize(n);
    int maxlab = 0;
    for (uint32_t i = 0; i < n; ++i) {
        ds.labels[i] = lab[i];
        maxlab = std::max(maxlab, int(lab[i]));
    }
    ds.num_classes = maxlab + 1;
    ds.provenance = "idx:" + images_path;
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    if (ds.images.rank() != 4 || ds.images.dim(1) != 1)
        throw ConfigError("save_idx: expected single-channel [N,1,H,W] images");
    int64_t n = ds.size(), rows = ds.images.dim(2), cols = ds.images.dim(3);
    auto be = [](std::ofstream& os, uint32_t v) {
        uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
        os.write(reinterpret_cast<char*>(b), 4);
    };
    std::ofstream io(images_path, std::ios::binary);
    if (!io) throw std::runtime_error("cannot write " + images_path);
    be(io, 0x00000803);
    be(io, uint32_t(n));
    be(io, uint32_t(rows));
    be(io, uint32_t(cols));
    const double* d = ds.images.data();
    std::vector<uint8_t> buf(size_t(n) * rows * cols);
    for (size_t i = 0; i < buf.size(); ++i)
        buf[i] = uint8_t(std::lround(std::clamp(d[i], 0.0, 1.0) * 255.0));
    io.write(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));

    std::ofstream lo(labels_path, std::ios::binary);
    if (!lo) throw std::runtime_error("cannot write " + labels_path);
    be(lo, 0x00000801);
    be(lo, uint32_t(n));
    for (int64_t i = 0; i < n; ++i) {
        uint8_t b = uint8_t(ds.labels[i]);
        lo.write(reinterpret_cast<char*>(&b), 1);
    }
}

Dataset synth_blobs(int num_classes, int64_t n_per_class, std::vector<int64_t> shape, double spread,
                    uint64_t seed, uint64_t template_seed) {
    if (num_classes < 2) throw ConfigError("synth_blobs: needs k >= 2");
    if (shape.size() != 3) throw ConfigError("synth_blobs: shape must be {C,H,W}");
    int64_t pix = shape_numel(shape);
    Rng rng(seed, Stream::data);
    // One fixed template image per class; samples are noisy copies. The
    // template stream is salted so it never collides with the sample stream.
    Rng trng(template_seed, Stream::data, 1);
    std::vector<std::vector<double>> tmpl(num_classes, std::vector<double>(pix));
    for (auto& t : tmpl)
        for (double& v : t) v = trng.uniform(0.15, 0.85);

    int64_t n = n_per_class * num_classes;
    Dataset ds;
    ds.images = Tensor::zeros({n, shape[0], shape[1], shape[2]});
    ds.labels.resize(n);
    ds.num_classes = num_classes;
    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    double* img = ds.images.data();
    for (int64_t i = 0; i < n; ++i) {
        int cls = int(order[i] % num_classes);
        ds.labels[i] = cls;
        double* dst = img + i * pix;
        const double* t = tmpl[cls].data();
        for (int64_t p = 0; p < pix; ++p)
            dst[p] = std::clamp(t[p] + spread * rng.normal(), 0.0, 1.0);
    }
    std::ostringstream prov;
    prov << "synth_blobs(k=" << num_classes << ",n_per_class=" << n_per_class
         << ",spread=" << spread << ",seed=" << seed;
    if (template_seed != seed) prov << ",template_seed=" << template_seed;
    prov << ")";
    ds.provenance = prov.str();
    return ds;
}

Dataset synth_blobs(int num_classes, int64_t n_per_class, std::vector<int64_t> shape, double spread,
                    uint64_t seed) {
    return synth_blobs(num_classes, n_per_class, std::move(shape), spread, seed, seed);
}

namespace {

struct Pt {
    double x, y;
};
using Stroke = std::vector<Pt>;

// Stroke skeletons on the unit square, y growing downward.
std::vector<Stroke> digit_strokes(int d) {
    auto arc = [](double cx, double cy, double rx, double ry, double a0, double a1, int steps) {
        Stroke s;
        for (int i = 0; i <= steps; ++i) {
            double a = (a0 + (a1 - a0) * i / steps) * M_PI / 180.0;
            s.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
        }
        return s;
    };
    switch (d) {
        case 0:
            return {arc(0.5, 0.5, 0.26, 0.38, 0, 360, 24)};
        case 1:
            return {{{0.35, 0.26}, {0.54, 0.10}, {0.54, 0.90}}};
        case 2:
            return {arc(0.5, 0.32, 0.25, 0.21, 180, 342, 12),
                    {{0.74, 0.40}, {0.50, 0.62}, {0.25, 0.86}},
                    {{0.25, 0.86}, {0.78, 0.86}}};
        case 3:
            return {arc(0.47, 0.29, 0.23, 0.18, 160, 395, 12),
                    arc(0.47, 0.67, 0.26, 0.21, -35, 200, 12)};
        case 4:
            return {{{0.64, 0.10}, {0.22, 0.60}, {0.80, 0.60}}, {{0.64, 0.10}, {0.64, 0.92}}};
        case 5:
            return {{{0.74, 0.12}, {0.32, 0.12}, {0.29, 0.45}},
                    arc(0.47, 0.64, 0.26, 0.22, -90, 140, 14)};
        case 6:
            return {{{0.66, 0.10}, {0.42, 0.28}, {0.30, 0.58}},
                    arc(0.50, 0.68, 0.21, 0.19, -180, 180, 16)};
        case 7:
            return {{{0.24, 0.14}, {0.78, 0.14}, {0.42, 0.90}}};
        case 8:
            return {arc(0.5, 0.30, 0.18, 0.16, 90, 450, 14), arc(0.5, 0.66, 0.23, 0.20, -90, 270, 16)};
        case 9:
            return {arc(0.52, 0.32, 0.20, 0.18, -90, 270, 14), {{0.72, 0.34}, {0.66, 0.90}}};
        default:
            throw ConfigError("digit_strokes: digit out of range");
    }
}

void render_digit(double* img, int hw, int digit, Rng& rng) {
    double theta = rng.uniform(-0.22, 0.22);
    double sx = rng.uniform(0.82, 1.12), sy = rng.uniform(0.82, 1.12);
    double shear = rng.uniform(-0.18, 0.18);
    double tx = rng.uniform(-0.06, 0.06), ty = rng.uniform(-0.05, 0.05);
    double width = rng.uniform(0.085, 0.15);
    double intensity = rng.uniform(0.78, 1.0);
    double ct = std::cos(theta), st = std::sin(theta);

    auto xform = [&](Pt p) {
        double x = (p.x - 0.5) * sx + (p.y - 0.5) * shear, y = (p.y - 0.5) * sy;
        return Pt{ct * x - st * y + 0.5 + tx, st * x + ct * y + 0.5 + ty};
    };

    double radius = width * 0.5 * (hw - 1);
    auto stamp = [&](Pt p) {
        double px = p.x * (hw - 1), py = p.y * (hw - 1);
        int x0 = std::max(0, int(px - radius - 1)), x1 = std::min(hw - 1, int(px + radius + 2));
        int y0 = std::max(0, int(py - radius - 1)), y1 = std::min(hw - 1, int(py + radius + 2));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double dist = std::hypot(x - px, y - py);
                double a = std::clamp((radius - dist) / 0.9 + 0.5, 0.0, 1.0);
                double v = intensity * a;
                double& cell = img[y * hw + x];
                cell = std::max(cell, v);
            }
    };

    for (const Stroke& s : digit_strokes(digit)) {
        for (size_t i = 0; i + 1 < s.size(); ++i) {
            Pt a = xform(s[i]), b = xform(s[i + 1]);
            double len = std::hypot(b.x - a.x, b.y - a.y);
            int steps = std::max(1, int(len / 0.015));
            for (int t = 0; t <= steps; ++t) {
                double u = double(t) / steps;
                stamp({a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u});
            }
        }
    }

    double noise = rng.uniform(0.015, 0.045);
    for (int i = 0; i < hw * hw; ++i)
        img[i] = std::clamp(img[i] + noise * rng.normal(), 0.0, 1.0);
}

}  // namespace

Dataset synth_digits(int64_t n_total, uint64_t seed) {
    constexpr int kHw = 28;
    Dataset ds;
    ds.images = Tensor::zeros({n_total, 1, kHw, kHw});
    ds.labels.resize(n_total);
    ds.num_classes = 10;
    std::vector<int64_t> order(n_total);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(seed, Stream::data, 0x1d);
    shuffle_rng.shuffle(order);
    for (int64_t i = 0; i < n_total; ++i) {
        int digit = int(order[i] % 10);  // balanced classes, shuffled order
        ds.labels[i] = digit;
        Rng rng(seed, Stream::data, uint64_t(order[i]) + 1);
        render_digit(ds.images.data() + i * kHw * kHw, kHw, digit, rng);
    }
    ds.provenance = "synth_digits(n=" + std::to_string(n_total) + ",seed=" + std::to_string(seed) + ")";
    return ds;
}

Dataset subset(const Dataset& ds, int64_t n, uint64_t seed) {
    if (n > ds.size())
        throw ConfigError("subset: requested " + std::to_string(n) + " of " +
                          std::to_string(ds.size()) + " samples");
    std::vector<int64_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed, Stream::data, 0x5b);
    rng.shuffle(order);
    order.resize(n);
    Dataset out;
    out.images = take_rows(ds.images, order);
    out.labels.resize(n);
    for (int64_t i = 0; i < n; ++i) out.labels[i] = ds.labels[order[i]];
    out.split = ds.split;
    out.num_classes = ds.num_classes;
    out.provenance = ds.provenance + " subset(n=" + std::to_string(n) + ",seed=" +
                     std::to_string(seed) + ")";
    return out;
}

std::vector<std::vector<int64_t>> make_batches(int64_t n, int64_t batch_size, bool shuffle,
                                               uint64_t seed, uint64_t epoch) {
    if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
        Rng rng(seed, Stream::shuffle, epoch);
        rng.shuffle(order);
    }
    std::vector<std::vector<int64_t>> out;
    for (int64_t at = 0; at < n; at += batch_size) {
        int64_t cnt = std::min(batch_size, n - at);
        out.emplace_back(order.begin() + at, order.begin() + at + cnt);
    }
    return out;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    nlohmann::json j;
    j["kind"] = "dataset";
    j["split"] = ds.split;
    j["provenance"] = ds.provenance;
    j["num_classes"] = ds.num_classes;
    Tensor labels = Tensor::zeros({ds.size()});
    for (int64_t i = 0; i < ds.size(); ++i) labels.data()[i] = ds.labels[i];
    write_container(path, j.dump(), {ds.images, labels});
}

Dataset load_dataset(const std::string& path) {
    Container c = read_container(path);
    nlohmann::json j = nlohmann::json::parse(c.json_descriptor);
    if (j.value("kind", "") != "dataset")
        throw FormatError("load_dataset: " + path + " is not a dataset container");
    if (c.tensors.size() != 2) throw FormatError("load_dataset: expected 2 tensors");
    Dataset ds;
    ds.images = c.tensors[0];
    ds.labels.resize(c.tensors[1].numel());
    for (size_t i = 0; i < ds.labels.size(); ++i) ds.labels[i] = int(c.tensors[1].data()[i]);
    ds.split = j.value("split", "");
    ds.provenance = j.value("provenance", "");
    ds.num_classes = j.value("num_classes", 0);
    return ds;
}

}  // namespace protoshield
