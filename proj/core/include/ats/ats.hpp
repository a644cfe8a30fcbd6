// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ats/attention.hpp"

namespace ats {

/// How per-token significance is derived from an attention state.
enum class ScoringMethod {
    cls_attn_vnorm,  ///< CLS attention row weighted by ‖V_j‖₂ (default)
    cls_attn,        ///< CLS attention row only
    rowsum_attn,     ///< column sums of A over every row
    random_token,    ///< attention row of a seeded random non-CLS token
};

/// Resolution of a grid point k to a token index.
enum class InverseRule {
    ceil,     ///< smallest i with cdf[i] ≥ k
    nearest,  ///< piecewise-linear cdf inverse, rounded half away from zero
};

enum class SamplingPolicy { inverse_transform, topk, random };

std::string_view to_string(ScoringMethod m);
std::string_view to_string(InverseRule r);
std::string_view to_string(SamplingPolicy p);
/// Accepts both the CLI spellings (cls-vnorm, inverse, ...) and the enum names.
ScoringMethod parse_scoring(std::string_view s);
InverseRule parse_inverse_rule(std::string_view s);
SamplingPolicy parse_policy(std::string_view s);

/// Normalized scores over the N non-CLS tokens (position i is token i+1)
/// and their prefix sums. cdf.back() is exactly 1.
struct ScoreVector {
    std::vector<double> scores;
    std::vector<double> cdf;
    /// Set when every unnormalized score was zero and uniform scores were used.
    bool uniform_fallback = false;

    std::size_t size() const noexcept { return scores.size(); }
};

struct SamplerConfig {
    std::size_t budget = 1;
    InverseRule rule = InverseRule::ceil;
    SamplingPolicy policy = SamplingPolicy::inverse_transform;
    /// Only consulted by SamplingPolicy::random.
    std::uint64_t seed = 0;

    /// {1/K, 2/K, ..., K/K}; the last point is exactly 1.
    std::vector<double> grid() const;
    void validate() const;
};

/// Retained tokens of one sampling step, as indices into the (N+1)-token
/// sequence. kept is strictly increasing and starts with 0 (CLS).
struct SampleResult {
    std::vector<std::size_t> kept;
    std::size_t k_prime = 0;
    /// Ψ(k) per grid point before rounding (integral under the ceil rule);
    /// for topk/random, the selected indices in selection order.
    std::vector<double> psi;
};

nlohmann::json to_json(const SampleResult& r);
/// Validates structure and invariants; throws FormatError.
SampleResult sample_result_from_json(const nlohmann::json& j);

/// Significance scores from per-head attention [T×T] and values [T×head_dim].
/// Per-head unnormalized scores are summed over heads and normalized once.
/// `seed` selects the row for ScoringMethod::random_token.
template <typename T>
ScoreVector compute_scores(std::span<const Tensor<T>> attn, std::span<const Tensor<T>> values, ScoringMethod method,
                           std::uint64_t seed = 0);

/// Normalizes `scores` (uniform fallback on an all-zero input) and fills the cdf.
ScoreVector build_cdf(std::vector<double> scores);

SampleResult sample_indices(const ScoreVector& sv, const SamplerConfig& config);

/// Row-gather of A by result.kept; columns untouched.
template <typename T>
Tensor<T> refine_attention(const Tensor<T>& attn, const SampleResult& result);

/// concat_h(A^s[h]·V[h]) · W_out + b_out, where A^s keeps only the sampled
/// rows but V spans every input token. Output row 0 is CLS.
template <typename T>
Var<T> ats_attend(const AttentionState<T>& state, const SampleResult& result, Var<T> out_weight, Var<T> out_bias);

}  // namespace ats
