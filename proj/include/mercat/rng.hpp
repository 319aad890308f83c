#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "mercat/hash.hpp"

namespace mercat {

/// xoshiro256** seeded through splitmix64. Every random draw in the project
/// goes through this generator so results are identical across platforms and
/// standard libraries (std::*_distribution is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept {
        std::uint64_t sm = seed;
        for (auto& s : state_) s = splitmix64(sm);
    }

    std::uint64_t next() noexcept {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept {
        const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
        std::uint64_t x = next();
        while (x >= limit) x = next();
        return x % n;
    }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    template <typename T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    template <typename Container>
    const auto& pick(const Container& c) noexcept {
        return c[static_cast<std::size_t>(below(c.size()))];
    }

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
};

}  // namespace mercat
