#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace spikescore {

/// Stateless 64-bit mixer (the SplitMix64 finalizer).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// 64-bit FNV-1a over raw bytes. Used for stable keys and config hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

/// Derives a child key from a parent key and a tag; order-sensitive.
constexpr std::uint64_t derive_key(std::uint64_t parent, std::uint64_t tag) noexcept {
    return mix64(parent ^ mix64(tag + 0x632be59bd9b4e019ULL));
}
std::uint64_t derive_key(std::uint64_t parent, std::string_view tag) noexcept;

/// Counter-based generator: output i is mix64(key + i * golden), so any
/// position of the stream can be computed without replaying the prefix and
/// two keys never share state. All sampling helpers below are defined on
/// top of next_u64() so results are identical on every platform (no
/// <random> distributions, whose algorithms are implementation-defined).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}
    CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept : key_(derive_key(seed, stream)) {}

    std::uint64_t next_u64() noexcept {
        return mix64(key_ + (counter_++) * 0x9e3779b97f4a7c15ULL);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on the open interval (0, 1).
    double uniform_open() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, bound) by rejection; bound must be > 0.
    std::uint64_t below(std::uint64_t bound) noexcept;

    /// Standard normal via Box-Muller (one draw per call, no caching).
    double normal() noexcept;

    template <typename T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(v[i - 1], v[j]);
        }
    }

    [[nodiscard]] std::uint64_t key() const noexcept { return key_; }
    [[nodiscard]] std::uint64_t position() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace spikescore
