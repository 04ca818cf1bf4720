#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace pae {

// 64-bit FNV-1a. Used for substream derivation, config hashing, and
// content addressing of store files.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

// Deterministic generator: SplitMix64 state advance with finalizer mix.
// All randomness in the project flows from a single root seed through
// named substreams so individual stages can be pinned in tests.
//
// normal() draws exactly two uniforms per call (Box-Muller, no cached
// spare) so the stream position is a pure function of the call count.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    static Rng substream(uint64_t root_seed, std::string_view name) {
        uint64_t h = fnv1a64(name);
        h ^= root_seed + 0x9e3779b97f4a7c15ULL;
        return Rng(mix(h));
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller on (0,1] x [0,1).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n) via rejection-free scaling (n << 2^64 here).
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

}  // namespace pae
