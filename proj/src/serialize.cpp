#include "protoshield/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace protoshield {

namespace {

// The format is little-endian by definition; these helpers assume a
// little-endian host (asserted at startup below).
static_assert(std::endian::native == std::endian::little, "little-endian host required");

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t get_u32(std::istream& is) {
    uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw FormatError("container: truncated u32");
    return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) put_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()), sizeof(double) * t.numel());
}

Tensor read_tensor(std::istream& is) {
    uint32_t rank = get_u32(is);
    if (rank > 8) throw FormatError("container: implausible tensor rank " + std::to_string(rank));
    std::vector<int64_t> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = get_u32(is);
    Tensor t = Tensor::zeros(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), sizeof(double) * t.numel()))
        throw FormatError("container: truncated tensor data");
    return t;
}

void write_container(const std::string& path, const std::string& json_descriptor,
                     const std::vector<Tensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write(kFileMagic, sizeof(kFileMagic));
    put_u32(os, static_cast<uint32_t>(json_descriptor.size()));
    os.write(json_descriptor.data(), static_cast<std::streamsize>(json_descriptor.size()));
    put_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const Tensor& t : tensors) write_tensor(os, t);
    if (!os) throw std::runtime_error("write failed for " + path);
}

Container read_container(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    char magic[sizeof(kFileMagic)];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kFileMagic, sizeof(magic)) != 0)
        throw FormatError("container: bad magic in " + path);
    uint32_t jlen = get_u32(is);
    Container c;
    c.json_descriptor.resize(jlen);
    if (!is.read(c.json_descriptor.data(), jlen))
        throw FormatError("container: truncated descriptor in " + path);
    uint32_t count = get_u32(is);
    c.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) c.tensors.push_back(read_tensor(is));
    return c;
}

}  // namespace protoshield
