#include "dendseg/rng.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace dendseg {

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h) noexcept {
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001B3ull;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t h) noexcept {
    return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()), h);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view component) noexcept {
    return mix64(root ^ mix64(fnv1a64(component)));
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) noexcept {
    return mix64(root ^ mix64(index + 0x632BE59BD9B4E019ull));
}

double uniform(Rng& rng, double lo, double hi) {
    if (lo == hi) return lo;
    // 53 random mantissa bits -> [0, 1)
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
    // rejection sampling keeps the draw unbiased
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t r = rng();
    while (r >= limit) r = rng();
    return static_cast<std::size_t>(r % n);
}

double normal(Rng& rng) {
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
    const double u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

} // namespace dendseg
