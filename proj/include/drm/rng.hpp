#pragma once

#include <cstdint>
#include <string_view>

namespace drm {

/// Counter-based splittable generator.
///
/// Output i of a stream with key k is mix64(k + (i + 1) * 0x9E3779B97F4A7C15),
/// where mix64 is the SplitMix64 finalizer. A stream is fully described by
/// (key, counter), so any draw can be reproduced without replaying earlier ones,
/// and child streams derived through split() are independent of the parent's
/// position. Results are identical on every platform.
class CounterRng {
public:
    static constexpr std::string_view kAlgorithm = "splitmix64-counter";

    explicit CounterRng(std::uint64_t seed) noexcept : key_(mix64(seed ^ 0xD1B54A32D192ED03ULL)) {}

    static constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() noexcept {
        ++counter_;
        return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
    }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Child stream; depends only on this stream's key and the stream id.
    CounterRng split(std::uint64_t stream) const noexcept {
        CounterRng child(0);
        child.key_ = mix64(key_ ^ mix64(stream + 0x632BE59BD9B4E019ULL));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace drm
