#include "spikescore/rng.hpp"

#include <cmath>
#include <numbers>

namespace spikescore {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) noexcept {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_key(std::uint64_t parent, std::string_view tag) noexcept {
    return derive_key(parent, fnv1a64(tag));
}

std::uint64_t CounterRng::below(std::uint64_t bound) noexcept {
    // Reject the low partial block so every residue is equally likely.
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        const std::uint64_t x = next_u64();
        if (x >= threshold) return x % bound;
    }
}

double CounterRng::normal() noexcept {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace spikescore
