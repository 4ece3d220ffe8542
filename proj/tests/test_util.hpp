#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "protoshield/rng.hpp"
#include "protoshield/tensor.hpp"

namespace testutil {

inline protoshield::Tensor rand_tensor(std::vector<int64_t> shape, protoshield::Rng& rng,
                                       double lo = -1.0, double hi = 1.0,
                                       bool requires_grad = false) {
    int64_t n = protoshield::shape_numel(shape);
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.uniform(lo, hi);
    return protoshield::Tensor::from_vec(std::move(shape), std::move(v), requires_grad);
}

// Pushes every element at least `margin` away from zero, preserving sign.
// Finite differences near a kink would otherwise sample both branches.
inline void keep_away_from_zero(protoshield::Tensor t, double margin) {
    double* v = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) {
        if (std::fabs(v[i]) < margin) v[i] = v[i] >= 0 ? margin : -margin;
    }
}

inline bool bitwise_equal(const protoshield::Tensor& a, const protoshield::Tensor& b) {
    if (a.shape() != b.shape()) return false;
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i) {
        if (std::memcmp(&pa[i], &pb[i], sizeof(double)) != 0) return false;
    }
    return true;
}

// Fresh per-test scratch directory under the build tree.
inline std::string scratch_dir(const std::string& tag) {
    namespace fs = std::filesystem;
    fs::path p = fs::temp_directory_path() / ("protoshield-tests-" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

inline std::string read_file(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) return {};
    std::string out;
    char buf[4096];
    size_t got;
    while ((got = std::fread(buf, 1, sizeof(buf), f)) > 0) out.append(buf, got);
    std::fclose(f);
    return out;
}

}  // namespace testutil
