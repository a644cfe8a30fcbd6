// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "ats/attention.hpp"

#include <cmath>
#include <string>

namespace ats {

void AttentionConfig::validate() const {
    if (heads == 0 || dim == 0 || dim % heads != 0) {
        throw ContractError("attention: dim " + std::to_string(dim) + " is not divisible into " +
                            std::to_string(heads) + " heads");
    }
}

template <typename T>
std::vector<Tensor<T>> AttentionState<T>::attention_values() const {
    std::vector<Tensor<T>> out;
    out.reserve(attn.size());
    for (const auto& a : attn) out.push_back(a.value());
    return out;
}

template <typename T>
std::vector<Tensor<T>> AttentionState<T>::value_values() const {
    std::vector<Tensor<T>> out;
    out.reserve(v.size());
    for (const auto& x : v) out.push_back(x.value());
    return out;
}

template <typename T>
AttentionState<T> project_qkv(Var<T> tokens, Var<T> qkv_weight, Var<T> qkv_bias, const AttentionConfig& config) {
    config.validate();
    const std::size_t d = config.dim;
    const auto& w = qkv_weight.value().shape();
    if (tokens.value().rank() != 2 || tokens.value().cols() != d) {
        throw DimensionError("project_qkv: tokens must be [T x " + std::to_string(d) + "], got " +
                             shape_string(tokens.value().shape()));
    }
    if (w.size() != 2 || w[0] != d || w[1] != 3 * d || qkv_bias.value().size() != 3 * d) {
        throw DimensionError("project_qkv: expected weight [" + std::to_string(d) + " x " + std::to_string(3 * d) +
                             "] and bias [" + std::to_string(3 * d) + "], got " + shape_string(w));
    }
    Var<T> fused = linear(tokens, qkv_weight, qkv_bias);
    AttentionState<T> state;
    state.config = config;
    const std::size_t hd = config.head_dim();
    for (std::size_t h = 0; h < config.heads; ++h) {
        state.q.push_back(slice_cols(fused, h * hd, hd));
        state.k.push_back(slice_cols(fused, d + h * hd, hd));
        state.v.push_back(slice_cols(fused, 2 * d + h * hd, hd));
    }
    return state;
}

template <typename T>
void attention_matrix(AttentionState<T>& state, std::size_t scale_dim) {
    if (scale_dim == 0) throw ContractError("attention_matrix: scale_dim must be positive");
    const double factor = 1.0 / std::sqrt(static_cast<double>(scale_dim));
    state.attn.clear();
    for (std::size_t h = 0; h < state.q.size(); ++h) {
        state.attn.push_back(softmax_rows(scale(matmul_nt(state.q[h], state.k[h]), factor)));
    }
}

template <typename T>
Var<T> attend(const AttentionState<T>& state, Var<T> out_weight, Var<T> out_bias) {
    if (state.attn.size() != state.v.size() || state.attn.empty()) {
        throw ContractError("attend: attention matrices have not been computed");
    }
    std::vector<Var<T>> heads;
    heads.reserve(state.attn.size());
    for (std::size_t h = 0; h < state.attn.size(); ++h) heads.push_back(matmul(state.attn[h], state.v[h]));
    Var<T> merged = heads.size() == 1 ? heads.front() : concat_cols<T>(heads);
    return linear(merged, out_weight, out_bias);
}

#define ATS_INSTANTIATE_ATTENTION(T)                                                             \
    template struct AttentionState<T>;                                                           \
    template AttentionState<T> project_qkv(Var<T>, Var<T>, Var<T>, const AttentionConfig&);      \
    template void attention_matrix(AttentionState<T>&, std::size_t);                             \
    template Var<T> attend(const AttentionState<T>&, Var<T>, Var<T>);

ATS_INSTANTIATE_ATTENTION(float)
ATS_INSTANTIATE_ATTENTION(double)

}  // namespace ats
