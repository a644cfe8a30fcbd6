// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

#include "ats/autodiff.hpp"

namespace ats {

struct AttentionConfig {
    std::size_t dim = 64;
    std::size_t heads = 4;

    std::size_t head_dim() const noexcept { return heads == 0 ? 0 : dim / heads; }
    /// Throws ContractError unless heads divides dim with a positive quotient.
    void validate() const;
};

/// Per-head intermediates of one self-attention evaluation. q/k/v[h] are
/// [T × head_dim]; attn[h] is the row-stochastic [T × T] matrix.
template <typename T>
struct AttentionState {
    AttentionConfig config;
    std::vector<Var<T>> q, k, v, attn;

    std::size_t tokens() const { return q.empty() ? 0 : q.front().value().rows(); }
    std::vector<Tensor<T>> attention_values() const;
    std::vector<Tensor<T>> value_values() const;
};

/// Fused projection tokens·W + b with W [d × 3d]. Output columns are laid out
/// as [Q | K | V]; within each block head h owns columns
/// [h·head_dim, (h+1)·head_dim).
template <typename T>
AttentionState<T> project_qkv(Var<T> tokens, Var<T> qkv_weight, Var<T> qkv_bias, const AttentionConfig& config);

/// attn[h] = softmax(q[h]·k[h]ᵀ / √scale_dim). The model passes head_dim.
template <typename T>
void attention_matrix(AttentionState<T>& state, std::size_t scale_dim);

/// concat_h(attn[h]·v[h]) · W_out + b_out
template <typename T>
Var<T> attend(const AttentionState<T>& state, Var<T> out_weight, Var<T> out_bias);

}  // namespace ats
