// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "ats/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ats {

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

std::uint64_t Rng::at(std::uint64_t position) const noexcept {
    // Key the stream by a pre-mixed seed so neighbouring seeds do not overlap
    // as shifted copies of one another.
    return mix64(mix64(seed_ ^ 0x5851f42d4c957f2dULL) + (position + 1) * kGolden);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_int(std::uint64_t n) noexcept {
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
}

double Rng::normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::beta_int(unsigned a, unsigned b) {
    if (a == 0 || b == 0) throw std::invalid_argument("beta_int: shapes must be positive");
    std::vector<double> u(a + b - 1);
    for (auto& v : u) v = uniform();
    std::nth_element(u.begin(), u.begin() + (a - 1), u.end());
    return u[a - 1];
}

Rng Rng::derive(std::uint64_t stream) const noexcept { return Rng(mix64(seed_ + kGolden) ^ mix64(stream + 1)); }

}  // namespace ats
