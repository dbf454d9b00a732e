// Copyright (c) 2026 the cpoly authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace cpoly {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Counter-based random stream. A stream is keyed by a tuple of integers
/// (run seed, purpose tag, step, layer, task, ...) and yields a deterministic
/// sequence independent of any other stream, so independent consumers may
/// draw concurrently with results identical to sequential execution.
class Rng {
public:
    Rng() : key_(0) {}

    static Rng keyed(std::initializer_list<std::uint64_t> parts) {
        std::uint64_t k = 0x6a09e667f3bcc908ULL;
        for (std::uint64_t p : parts) {
            k = splitmix64(k ^ p);
        }
        return Rng(k);
    }

    std::uint64_t next_u64() { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * (++counter_)); }

    /// Uniform in [0, 1).
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform in (0, 1]; safe under log().
    double next_uniform_open() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t next_index(std::uint64_t n) {
        // 53-bit multiply avoids modulo bias for the small n used here.
        return static_cast<std::uint64_t>(next_uniform() * static_cast<double>(n));
    }

    /// Standard normal via Box-Muller.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = next_uniform_open();
        const double u2 = next_uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    explicit Rng(std::uint64_t key) : key_(key) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// Stream purpose tags. Distinct tags guarantee disjoint streams for the
/// same (seed, step, ...) coordinates.
namespace stream {
inline constexpr std::uint64_t kInitBase = 1;
inline constexpr std::uint64_t kInitAdapter = 2;
inline constexpr std::uint64_t kInitAllocation = 3;
inline constexpr std::uint64_t kRouting = 4;
inline constexpr std::uint64_t kData = 5;
inline constexpr std::uint64_t kShuffle = 6;
}  // namespace stream

}  // namespace cpoly
