#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ff {

// Counter-based generator built on the SplitMix64 mixer. The whole state is
// one 64-bit word, so streams serialize to a single integer and identical
// seeds give identical draws on every platform.
class Rng {
public:
    Rng() : state_(0) {}
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    // Uniform in [0,1) with 24 bits of mantissa.
    float uniform() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    // Uniform double in [0,1).
    double uniform_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; computed in double, returned as float.
    // Stateless per draw (no cached spare), so the state stays one word.
    float normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0,1]
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;        // [0,1)
        double r = std::sqrt(-2.0 * std::log(u1));
        return static_cast<float>(r * std::cos(6.283185307179586 * u2));
    }

    bool bernoulli(float p) { return uniform() < p; }

    // Child stream decorrelated from this one; does not advance this stream.
    Rng derive(std::uint64_t salt) const { return Rng(mix(state_ ^ mix(salt))); }
    Rng derive(std::string_view tag) const { return derive(fnv1a(tag)); }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return h;
    }

private:
    std::uint64_t state_;
};

}  // namespace ff
