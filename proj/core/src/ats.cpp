// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "ats/ats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ats/rng.hpp"

namespace ats {

std::string_view to_string(ScoringMethod m) {
    switch (m) {
        case ScoringMethod::cls_attn_vnorm: return "cls-vnorm";
        case ScoringMethod::cls_attn: return "cls";
        case ScoringMethod::rowsum_attn: return "rowsum";
        case ScoringMethod::random_token: return "random-token";
    }
    return "?";
}

std::string_view to_string(InverseRule r) { return r == InverseRule::ceil ? "ceil" : "nearest"; }

std::string_view to_string(SamplingPolicy p) {
    switch (p) {
        case SamplingPolicy::inverse_transform: return "inverse";
        case SamplingPolicy::topk: return "topk";
        case SamplingPolicy::random: return "random";
    }
    return "?";
}

ScoringMethod parse_scoring(std::string_view s) {
    if (s == "cls-vnorm" || s == "cls_attn_vnorm") return ScoringMethod::cls_attn_vnorm;
    if (s == "cls" || s == "cls_attn") return ScoringMethod::cls_attn;
    if (s == "rowsum" || s == "rowsum_attn") return ScoringMethod::rowsum_attn;
    if (s == "random-token" || s == "random_token") return ScoringMethod::random_token;
    throw ContractError("unknown scoring method '" + std::string(s) + "'");
}

InverseRule parse_inverse_rule(std::string_view s) {
    if (s == "ceil") return InverseRule::ceil;
    if (s == "nearest") return InverseRule::nearest;
    throw ContractError("unknown inverse rule '" + std::string(s) + "'");
}

SamplingPolicy parse_policy(std::string_view s) {
    if (s == "inverse" || s == "inverse_transform") return SamplingPolicy::inverse_transform;
    if (s == "topk") return SamplingPolicy::topk;
    if (s == "random") return SamplingPolicy::random;
    throw ContractError("unknown sampling policy '" + std::string(s) + "'");
}

std::vector<double> SamplerConfig::grid() const {
    validate();
    std::vector<double> g(budget);
    for (std::size_t j = 0; j < budget; ++j) g[j] = static_cast<double>(j + 1) / static_cast<double>(budget);
    g.back() = 1.0;
    return g;
}

void SamplerConfig::validate() const {
    if (budget == 0) throw ContractError("sampler budget K must be at least 1");
}

nlohmann::json to_json(const SampleResult& r) {
    return {{"schema", 1}, {"kept", r.kept}, {"k_prime", r.k_prime}, {"psi", r.psi}};
}

SampleResult sample_result_from_json(const nlohmann::json& j) {
    try {
        if (j.at("schema").get<int>() != 1) throw FormatError("SampleResult: unsupported schema");
        SampleResult r;
        r.kept = j.at("kept").get<std::vector<std::size_t>>();
        r.k_prime = j.at("k_prime").get<std::size_t>();
        r.psi = j.at("psi").get<std::vector<double>>();
        if (r.kept.empty() || r.kept.front() != 0) throw FormatError("SampleResult: kept must start with CLS (0)");
        if (std::adjacent_find(r.kept.begin(), r.kept.end(), std::greater_equal<>()) != r.kept.end()) {
            throw FormatError("SampleResult: kept must be strictly increasing");
        }
        if (r.k_prime + 1 != r.kept.size()) throw FormatError("SampleResult: k_prime disagrees with kept");
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("SampleResult: ") + e.what());
    }
}

ScoreVector build_cdf(std::vector<double> scores) {
    ScoreVector sv;
    double total = 0.0;
    for (double s : scores) total += s;
    if (!(total > 0.0) || !std::isfinite(total)) {
        std::fill(scores.begin(), scores.end(), scores.empty() ? 0.0 : 1.0 / static_cast<double>(scores.size()));
        sv.uniform_fallback = true;
    } else {
        for (double& s : scores) s /= total;
    }
    sv.scores = std::move(scores);
    sv.cdf.resize(sv.scores.size());
    double running = 0.0;
    for (std::size_t i = 0; i < sv.scores.size(); ++i) {
        running += sv.scores[i];
        sv.cdf[i] = std::min(running, 1.0);
    }
    if (!sv.cdf.empty()) sv.cdf.back() = 1.0;
    return sv;
}

template <typename T>
ScoreVector compute_scores(std::span<const Tensor<T>> attn, std::span<const Tensor<T>> values, ScoringMethod method,
                           std::uint64_t seed) {
    if (attn.empty() || attn.size() != values.size()) {
        throw ContractError("compute_scores: need one value matrix per attention head");
    }
    const std::size_t tokens = attn.front().rows();
    if (tokens < 2) throw ContractError("compute_scores: need at least one non-CLS token");
    for (std::size_t h = 0; h < attn.size(); ++h) {
        if (attn[h].rank() != 2 || attn[h].rows() != tokens || attn[h].cols() != tokens ||
            values[h].rows() != tokens) {
            throw DimensionError("compute_scores: head " + std::to_string(h) + " has inconsistent shapes");
        }
    }
    const std::size_t n = tokens - 1;
    std::vector<double> raw(n, 0.0);
    std::size_t source_row = 0;
    if (method == ScoringMethod::random_token) source_row = 1 + static_cast<std::size_t>(Rng(seed).uniform_int(n));

    for (std::size_t h = 0; h < attn.size(); ++h) {
        const Tensor<T>& a = attn[h];
        const Tensor<T>& v = values[h];
        for (std::size_t j = 1; j < tokens; ++j) {
            double s = 0.0;
            switch (method) {
                case ScoringMethod::cls_attn_vnorm: {
                    double norm2 = 0.0;
                    for (T x : v.row(j)) norm2 += static_cast<double>(x) * static_cast<double>(x);
                    s = static_cast<double>(a(0, j)) * std::sqrt(norm2);
                    break;
                }
                case ScoringMethod::cls_attn: s = static_cast<double>(a(0, j)); break;
                case ScoringMethod::rowsum_attn:
                    for (std::size_t i = 0; i < tokens; ++i) s += static_cast<double>(a(i, j));
                    break;
                case ScoringMethod::random_token: s = static_cast<double>(a(source_row, j)); break;
            }
            raw[j - 1] += s;
        }
    }
    return build_cdf(std::move(raw));
}

namespace {

SampleResult finish(std::vector<std::size_t> picked, std::vector<double> psi) {
    picked.push_back(0);
    std::sort(picked.begin(), picked.end());
    picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
    SampleResult r;
    r.k_prime = picked.size() - 1;
    r.kept = std::move(picked);
    r.psi = std::move(psi);
    return r;
}

}  // namespace

SampleResult sample_indices(const ScoreVector& sv, const SamplerConfig& config) {
    config.validate();
    const std::size_t n = sv.size();
    if (n == 0 || sv.cdf.size() != n) throw ContractError("sample_indices: empty score vector");
    std::vector<std::size_t> picked;
    std::vector<double> psi;

    switch (config.policy) {
        case SamplingPolicy::inverse_transform: {
            for (double k : config.grid()) {
                const auto it = std::lower_bound(sv.cdf.begin(), sv.cdf.end(), k);
                const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - sv.cdf.begin()), n - 1);
                if (config.rule == InverseRule::ceil) {
                    psi.push_back(static_cast<double>(i + 1));
                    picked.push_back(i + 1);
                } else {
                    // Linear segment from (i, cdf[i-1]) to (i+1, cdf[i]) in 1-based token positions.
                    const double lo = i == 0 ? 0.0 : sv.cdf[i - 1];
                    const double hi = sv.cdf[i];
                    const double x = hi > lo ? static_cast<double>(i) + (k - lo) / (hi - lo) : static_cast<double>(i + 1);
                    psi.push_back(x);
                    const double rounded = std::clamp(std::round(x), 1.0, static_cast<double>(n));
                    picked.push_back(static_cast<std::size_t>(rounded));
                }
            }
            break;
        }
        case SamplingPolicy::topk: {
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return sv.scores[a] > sv.scores[b]; });
            const std::size_t take = std::min(config.budget, n);
            for (std::size_t i = 0; i < take; ++i) {
                picked.push_back(order[i] + 1);
                psi.push_back(static_cast<double>(order[i] + 1));
            }
            break;
        }
        case SamplingPolicy::random: {
            std::vector<std::size_t> pool(n);
            std::iota(pool.begin(), pool.end(), std::size_t{1});
            Rng rng(config.seed);
            const std::size_t take = std::min(config.budget, n);
            for (std::size_t i = 0; i < take; ++i) {
                const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
                std::swap(pool[i], pool[j]);
                picked.push_back(pool[i]);
                psi.push_back(static_cast<double>(pool[i]));
            }
            break;
        }
    }
    return finish(std::move(picked), std::move(psi));
}

template <typename T>
Tensor<T> refine_attention(const Tensor<T>& attn, const SampleResult& result) {
    return gather_rows(attn, std::span<const std::size_t>(result.kept));
}

template <typename T>
Var<T> ats_attend(const AttentionState<T>& state, const SampleResult& result, Var<T> out_weight, Var<T> out_bias) {
    if (state.attn.size() != state.v.size() || state.attn.empty()) {
        throw ContractError("ats_attend: attention matrices have not been computed");
    }
    std::vector<Var<T>> heads;
    heads.reserve(state.attn.size());
    const std::span<const std::size_t> kept(result.kept);
    for (std::size_t h = 0; h < state.attn.size(); ++h) {
        heads.push_back(matmul(gather_rows(state.attn[h], kept), state.v[h]));
    }
    Var<T> merged = heads.size() == 1 ? heads.front() : concat_cols<T>(heads);
    return linear(merged, out_weight, out_bias);
}

#define ATS_INSTANTIATE_ATS(T)                                                                                   \
    template ScoreVector compute_scores(std::span<const Tensor<T>>, std::span<const Tensor<T>>, ScoringMethod,   \
                                        std::uint64_t);                                                          \
    template Tensor<T> refine_attention(const Tensor<T>&, const SampleResult&);                                  \
    template Var<T> ats_attend(const AttentionState<T>&, const SampleResult&, Var<T>, Var<T>);

ATS_INSTANTIATE_ATS(float)
ATS_INSTANTIATE_ATS(double)

}  // namespace ats
