#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace dendseg {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; a bijection on 64-bit words.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

[[nodiscard]] std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                                    std::uint64_t h = 0xCBF29CE484222325ull) noexcept;
[[nodiscard]] std::uint64_t fnv1a64(std::string_view text,
                                    std::uint64_t h = 0xCBF29CE484222325ull) noexcept;

/// Child seed for a named component. All randomness in the library flows from
/// one root seed through this function.
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t root, std::string_view component) noexcept;
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) noexcept;

/// Uniform draw on [lo, hi]; returns lo exactly when lo == hi.
[[nodiscard]] double uniform(Rng& rng, double lo, double hi);

/// Uniform integer on [0, n); n must be positive.
[[nodiscard]] std::size_t uniform_index(Rng& rng, std::size_t n);

/// Standard normal draw (Box-Muller), identical across standard libraries.
[[nodiscard]] double normal(Rng& rng);

/// Fisher-Yates shuffle driven by uniform_index.
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[uniform_index(rng, i)]);
}

[[nodiscard]] std::string hex64(std::uint64_t v);

} // namespace dendseg
