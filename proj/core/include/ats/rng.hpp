// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ats {

/// Counter-based generator: output n is a stateless hash of (seed, n), so a
/// stream depends only on the seed and never on platform or thread count.
/// The mixing function is the SplitMix64 finalizer.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    /// Value at an arbitrary position of the stream, independent of state.
    std::uint64_t at(std::uint64_t position) const noexcept;

    std::uint64_t next_u64() noexcept { return at(counter_++); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t uniform_int(std::uint64_t n) noexcept;

    /// Standard normal via Box-Muller (no cached second value).
    double normal() noexcept;

    /// Beta(a, b) for positive integer shapes: the a-th order statistic of
    /// a + b - 1 uniforms.
    double beta_int(unsigned a, unsigned b);

    /// Independent generator for a labelled sub-stream.
    Rng derive(std::uint64_t stream) const noexcept;

    template <typename U>
    void shuffle(std::span<U> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    template <typename U>
    void shuffle(std::vector<U>& items) noexcept {
        shuffle(std::span<U>(items));
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace ats
