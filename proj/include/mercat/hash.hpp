#pragma once

#include <cstdint>
#include <string_view>

namespace mercat {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// FNV-1a 64-bit over raw bytes.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = kFnvOffset) noexcept {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= kFnvPrime;
    }
    return h;
}

/// One splitmix64 step: advances `state` and returns the mixed output.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent child seed for a named stage from a parent seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept {
    std::uint64_t state = seed ^ fnv1a64(tag);
    return splitmix64(state);
}

}  // namespace mercat
