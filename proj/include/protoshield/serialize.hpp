#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "protoshield/tensor.hpp"

namespace protoshield {

// On-disk container shared by checkpoints and dataset snapshots:
//   magic "PSHLD1" | u32 json length | json descriptor | u32 tensor count |
//   tensors, each as u32 rank, u32 dims..., little-endian f64 data.
inline constexpr char kFileMagic[6] = {'P', 'S', 'H', 'L', 'D', '1'};

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void write_container(const std::string& path, const std::string& json_descriptor,
                     const std::vector<Tensor>& tensors);

struct Container {
    std::string json_descriptor;
    std::vector<Tensor> tensors;
};
Container read_container(const std::string& path);

}  // namespace protoshield
