#pragma once

#include <cstdint>
#include <random>

namespace stylesiam {

// Deterministic random source. Only raw mt19937 outputs are consumed (the
// engine is fully specified by the standard); std::*_distribution is avoided
// because its output is implementation-defined.
class Rng {
public:
    explicit Rng(uint32_t seed) : eng_(seed) {}

    // uniform in [0, 1) with 24 bits of resolution
    float unit() {
        return static_cast<float>(eng_() >> 8) * (1.0f / 16777216.0f);
    }

    float uniform(float lo, float hi) { return lo + (hi - lo) * unit(); }

    // uniform integer in [0, n), n >= 1
    uint32_t below(uint32_t n) {
        return static_cast<uint32_t>((static_cast<uint64_t>(eng_()) * n) >> 32);
    }

    uint32_t raw() { return eng_(); }

private:
    std::mt19937 eng_;
};

// splitmix-style mixer for deriving independent stream seeds
inline uint32_t mix_seed(uint32_t base, uint32_t salt) {
    uint32_t z = base + 0x9e3779b9u * (salt + 1u);
    z ^= z >> 16;
    z *= 0x85ebca6bu;
    z ^= z >> 13;
    z *= 0xc2b2ae35u;
    z ^= z >> 16;
    return z;
}

}  // namespace stylesiam
