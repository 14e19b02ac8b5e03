#pragma once

#include <cstdint>
#include <string_view>

#include "psp/tensor.hpp"

namespace psp {

// SplitMix64 finalizer (Steele, Lea & Flood constants).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// 64-bit FNV-1a.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Derives an independent stream key from a seed and a purpose tag.
constexpr std::uint64_t derive_key(std::uint64_t seed, std::string_view tag,
                                   std::uint64_t index = 0) noexcept {
    return mix64(mix64(seed ^ fnv1a64(tag)) + 0x9E3779B97F4A7C15ULL * (index + 1));
}

/// Counter-based generator: the n-th draw is mix64(key + n * golden-gamma).
///
/// Any draw can be recomputed from (key, n) alone, so a stream is fully
/// reproducible across runs and platforms. Gaussians use Box-Muller on two
/// consecutive 53-bit uniforms.
class CounterRng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

    std::uint64_t next_u64() noexcept { return mix64(key_ + kGamma * counter_++); }

    // Uniform in (0, 1]; never returns 0 so log() is safe.
    double next_uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }

    double next_gaussian() noexcept;

    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Tensor of i.i.d. N(0, stddev^2) samples.
Tensor gaussian_tensor(Shape shape, std::uint64_t key, float stddev = 1.0f);

}  // namespace psp
