// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ats/ats.hpp"
#include "ats/attention.hpp"
#include "ats/autodiff.hpp"

namespace ats {

/// Shape of the network. This is everything a weight file records.
struct ArchConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t channels = 1;
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t depth = 6;
    std::size_t mlp_ratio = 4;
    std::size_t num_classes = 4;
    double ln_eps = 1e-5;

    std::size_t grid() const noexcept { return image_size / patch_size; }
    std::size_t num_patches() const noexcept { return grid() * grid(); }
    std::size_t tokens() const noexcept { return num_patches() + 1; }
    std::size_t patch_dim() const noexcept { return patch_size * patch_size * channels; }
    std::size_t hidden_dim() const noexcept { return dim * mlp_ratio; }
    AttentionConfig attention() const noexcept { return {dim, heads}; }

    void validate() const;
    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Where and how tokens are sampled. Parameter-free: changing any of this
/// leaves the weights untouched.
struct AtsConfig {
    /// Block indices that carry a sampler, each in [0, depth).
    std::vector<std::size_t> stages;
    /// Upper bound K per stage: one entry (broadcast) or one per stage.
    /// Each stage clamps K to its current non-CLS token count.
    std::vector<std::size_t> budget;
    InverseRule rule = InverseRule::ceil;
    SamplingPolicy policy = SamplingPolicy::inverse_transform;
    ScoringMethod scoring = ScoringMethod::cls_attn_vnorm;
    std::uint64_t seed = 0;

    bool enabled() const noexcept { return !stages.empty(); }
    bool is_stage(std::size_t block) const;
    std::size_t budget_for(std::size_t stage_position) const;
    void validate(const ArchConfig& arch) const;

    /// Toy default: stages {2,3,4,5}, K = N.
    static AtsConfig defaults(const ArchConfig& arch);
};

struct ModelConfig {
    ArchConfig arch;
    AtsConfig ats;
};

nlohmann::json to_json(const ArchConfig& c);
ArchConfig arch_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AtsConfig& c);
AtsConfig ats_from_json(const nlohmann::json& j);

/// Vision transformer parameters in a fixed, named order.
template <typename T>
class Model {
public:
    Model() = default;
    /// Zero biases, unit LayerNorm gains, N(0, 0.02²) clipped at ±2σ elsewhere.
    static Model initialize(const ArchConfig& arch, std::uint64_t seed);
    /// Every tensor zero (LayerNorm gains included); filled by load_weights.
    static Model zeros(const ArchConfig& arch);

    const ArchConfig& arch() const noexcept { return arch_; }
    std::vector<Parameter<T>>& parameters() noexcept { return params_; }
    const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
    std::size_t parameter_count() const;

    Parameter<T>& at(const std::string& name);
    const Parameter<T>& at(const std::string& name) const;

    void zero_grad();

    template <typename U>
    Model<U> cast() const {
        Model<U> out = Model<U>::zeros(arch_);
        for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i].value = params_[i].value.template cast<U>();
        return out;
    }

private:
    ArchConfig arch_;
    std::vector<Parameter<T>> params_;
};

/// Names and shapes of every parameter for `arch`, in storage order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ArchConfig& arch);

/// Per-block token bookkeeping. kept_original maps each output row of the
/// block to its index in the input sequence of block 0 (0 = CLS).
struct StageTrace {
    std::size_t block = 0;
    std::size_t tokens_in = 0;
    std::size_t tokens_out = 0;
    std::optional<SampleResult> sample;
    std::vector<std::size_t> kept_original;
};

struct ForwardTrace {
    std::vector<StageTrace> stages;
    std::vector<double> logits;
    std::size_t predicted = 0;
};

nlohmann::json to_json(const ForwardTrace& t);

/// [H×W×C] image → [N × patch_size²·C] rows, patches in row-major grid order,
/// each flattened as (dy, dx, c).
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, const ArchConfig& arch);

/// Parameters bound onto a tape, either read-only or with per-parameter
/// gradient sinks (so concurrent tapes never share a gradient buffer).
template <typename T>
struct BoundModel {
    const Model<T>* model = nullptr;
    std::vector<Var<T>> vars;

    Var<T> operator[](std::size_t i) const { return vars[i]; }
};

template <typename T>
BoundModel<T> bind_model(Tape<T>& tape, const Model<T>& model, std::span<Tensor<T>> grad_sinks = {});

/// Linear patch projection, CLS row prepended, positional embedding added.
template <typename T>
Var<T> patch_embed(const BoundModel<T>& m, const Tensor<T>& image);

/// One pre-norm transformer block. When `ats` is set, the attention
/// sub-layer samples tokens and the residual branch is gathered to match.
/// A non-null `frozen` result replaces sampling (indices carry no gradient).
template <typename T>
Var<T> transformer_block(const BoundModel<T>& m, std::size_t block, Var<T> x, const AtsConfig* ats,
                         std::size_t stage_position, std::uint64_t sample_seed, StageTrace& trace,
                         const SampleResult* frozen = nullptr);

template <typename T>
struct ForwardOutput {
    Var<T> logits;
    ForwardTrace trace;
};

/// Full forward pass on `tape`. `sample_seed` feeds the random policies.
template <typename T>
ForwardOutput<T> forward(const BoundModel<T>& m, const Tensor<T>& image, const AtsConfig& ats,
                         std::uint64_t sample_seed = 0);

/// Inference convenience: builds a non-recording tape internally.
template <typename T>
ForwardTrace forward(const Model<T>& model, const Tensor<T>& image, const AtsConfig& ats,
                     std::uint64_t sample_seed = 0);

}  // namespace ats
