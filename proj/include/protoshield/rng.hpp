#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace protoshield {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Named substreams so that e.g. adversarial-example generation can be toggled
// without shifting the draws used for parameter init or shuffling.
enum class Stream : uint64_t {
    params = 1,
    protos = 2,
    shuffle = 3,
    advgen = 4,
    attack = 5,
    data = 6,
    probe = 7,
};

// All randomness flows through this wrapper; distributions are hand-rolled on
// top of mt19937_64 so results do not depend on the standard library vendor.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(splitmix64(seed)) {}
    Rng(uint64_t seed, Stream stream, uint64_t salt = 0)
        : eng_(splitmix64(splitmix64(seed ^ (static_cast<uint64_t>(stream) << 32)) ^ salt)) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0,1), 53-bit mantissa.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one draw consumed per call pair, cached spare kept.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        uint64_t lim = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = eng_();
        while (v >= lim) v = eng_();
        return v % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace protoshield
