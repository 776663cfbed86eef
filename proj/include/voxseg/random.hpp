#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

// Portable deterministic random numbers. The standard distributions are implementation-defined,
// so generated fixtures would differ between standard libraries; everything here is bit-stable.
namespace voxseg::rng {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }
constexpr std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return mix(mix(a, b), c); }

/// Uniform double in [0, 1) from the top 53 bits.
constexpr double to_unit(std::uint64_t bits) { return double(bits >> 11) * 0x1.0p-53; }

/// Standard normal from two independent 64-bit words (Box-Muller, cosine branch).
inline double normal_from(std::uint64_t a, std::uint64_t b) {
    const double u1 = 1.0 - to_unit(a);  // (0, 1]
    const double u2 = to_unit(b);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential generator. Same seed, same sequence, on every platform.
class Stream {
public:
    explicit Stream(std::uint64_t seed) : state_(splitmix64(seed)) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ull;
        return splitmix64(state_);
    }
    double uniform() { return to_unit(next()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }
    double normal() {
        const auto a = next();
        return normal_from(a, next());
    }

private:
    std::uint64_t state_;
};

/// Stateless per-cell draws, keyed by (seed, cell, lane).
inline double hashed_uniform(std::uint64_t seed, std::uint64_t cell, std::uint64_t lane) {
    return to_unit(mix(seed, cell, lane));
}

inline double hashed_normal(std::uint64_t seed, std::uint64_t cell, std::uint64_t lane) {
    const auto a = mix(seed, cell, 2 * lane);
    return normal_from(a, mix(seed, cell, 2 * lane + 1));
}

}  // namespace voxseg::rng
