#pragma once

#include <cmath>
#include <cstdint>

namespace kinkcert {

// SplitMix64 generator. Small, fast, and with a fully pinned-down sequence,
// so trajectories and Monte Carlo reports are reproducible across platforms
// (std::normal_distribution has implementation-defined output and cannot be
// used for that).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller. Consumes exactly two words per draw so
    // the stream layout stays trivial to reconstruct in tests.
    double standard_normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Index in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Multiply-shift; bias is < 2^-64 * n, irrelevant for our trial counts.
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

  private:
    std::uint64_t state_;
};

// Derives a decorrelated seed for a sub-stream (trial index, stage id, ...).
// Mixing is the SplitMix64 finalizer applied to the combined words.
inline std::uint64_t split_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace kinkcert
