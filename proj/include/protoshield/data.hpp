#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protoshield/tensor.hpp"

namespace protoshield {

struct Dataset {
    Tensor images;  // [N, C, H, W], every pixel in [0, 1]
    std::vector<int> labels;
    std::string split;
    std::string provenance;
    int num_classes = 0;

    int64_t size() const { return images.defined() ? images.dim(0) : 0; }
};

// Big-endian IDX pair (0x803 images, 0x801 labels); pixels scaled by 1/255.
// Paths ending in .gz, or files starting with the gzip magic, are
// decompressed transparently.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes uncompressed IDX files; pixels are rounded to the nearest byte.
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// Gaussian class blobs rendered into an image shape; linearly separable at
// small spread. shape is {C, H, W}. template_seed pins the class geometry
// while seed drives sampling, so train and eval splits can share classes
// with disjoint noise; the short form ties both to one seed.
Dataset synth_blobs(int num_classes, int64_t n_per_class, std::vector<int64_t> shape,
                    double spread, uint64_t seed, uint64_t template_seed);
Dataset synth_blobs(int num_classes, int64_t n_per_class, std::vector<int64_t> shape,
                    double spread, uint64_t seed);

// Procedurally drawn 28x28 digits (stroke skeletons + random affine jitter,
// stroke width, contrast and pixel noise). Stands in for MNIST when the real
// IDX files are not on disk; same shape, same label set.
Dataset synth_digits(int64_t n_total, uint64_t seed);

// Deterministic sample of n items without replacement (a permutation when
// n == size).
Dataset subset(const Dataset& ds, int64_t n, uint64_t seed);

// Index batches for one epoch; every index exactly once, last batch partial.
std::vector<std::vector<int64_t>> make_batches(int64_t n, int64_t batch_size, bool shuffle,
                                               uint64_t seed, uint64_t epoch);

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace protoshield
