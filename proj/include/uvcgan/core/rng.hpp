#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

#include "uvcgan/core/error.hpp"

namespace uvcgan {

// FNV-1a over bytes; used both for RNG stream derivation and as the cheap
// content hash for parameter blobs and checkpoints.
inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic random stream. Distribution helpers are implemented by hand
// (not via std:: distributions) so that draw sequences are identical across
// standard libraries and survive serialization exactly.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    // Named substream: fans a root seed out into independent streams
    // ("init.gen_ab", "data.sample", "mask", "pool.a", ...).
    static Rng stream(std::uint64_t root_seed, std::string_view name) {
        return Rng(splitmix64(root_seed ^ fnv1a64(name)));
    }

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    std::int64_t uniform_index(std::int64_t n) {
        if (n <= 0) throw ValueError("Rng::uniform_index: n must be positive");
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return static_cast<std::int64_t>(v % un);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller. Consumes two uniforms per draw and keeps
    // no cached spare, so the stream state is exactly the engine state.
    double normal() {
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal(0, stddev) truncated to |z| <= 2*stddev by rejection.
    double truncated_normal(double stddev) {
        double z;
        do {
            z = normal();
        } while (std::abs(z) > 2.0);
        return z * stddev;
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& state) {
        std::istringstream is(state);
        is >> engine_;
        if (!is) throw IoError("Rng::deserialize: malformed engine state");
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace uvcgan
