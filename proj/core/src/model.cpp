// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "ats/model.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ats/rng.hpp"

namespace ats {

namespace {

constexpr std::size_t kStemParams = 4;
constexpr std::size_t kBlockParams = 12;

enum BlockSlot : std::size_t {
    kNorm1W, kNorm1B, kQkvW, kQkvB, kProjW, kProjB, kNorm2W, kNorm2B, kFc1W, kFc1B, kFc2W, kFc2B,
};

std::size_t block_slot(std::size_t block, BlockSlot slot) { return kStemParams + block * kBlockParams + slot; }

std::size_t tail_slot(const ArchConfig& arch, std::size_t k) { return kStemParams + arch.depth * kBlockParams + k; }

}  // namespace

void ArchConfig::validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
        throw ContractError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                            std::to_string(patch_size));
    }
    if (channels == 0 || depth == 0 || mlp_ratio == 0 || num_classes == 0) {
        throw ContractError("channels, depth, mlp_ratio and num_classes must be positive");
    }
    attention().validate();
}

bool AtsConfig::is_stage(std::size_t block) const {
    return std::find(stages.begin(), stages.end(), block) != stages.end();
}

std::size_t AtsConfig::budget_for(std::size_t stage_position) const {
    if (budget.empty()) throw ContractError("ATS budget is empty");
    return budget.size() == 1 ? budget.front() : budget.at(stage_position);
}

void AtsConfig::validate(const ArchConfig& arch) const {
    if (!std::is_sorted(stages.begin(), stages.end()) ||
        std::adjacent_find(stages.begin(), stages.end()) != stages.end()) {
        throw ContractError("ATS stages must be strictly increasing");
    }
    for (auto s : stages) {
        if (s >= arch.depth) {
            throw ContractError("ATS stage " + std::to_string(s) + " outside [0, " + std::to_string(arch.depth) + ")");
        }
    }
    if (stages.empty()) return;
    if (budget.size() != 1 && budget.size() != stages.size()) {
        throw ContractError("ATS budget needs one value or one per stage");
    }
    for (auto k : budget) {
        if (k == 0 || k > arch.num_patches()) {
            throw ContractError("ATS budget K=" + std::to_string(k) + " must lie in [1, " +
                                std::to_string(arch.num_patches()) + "]");
        }
    }
}

AtsConfig AtsConfig::defaults(const ArchConfig& arch) {
    AtsConfig c;
    for (std::size_t s = 2; s < arch.depth; ++s) c.stages.push_back(s);
    c.budget = {arch.num_patches()};
    return c;
}

nlohmann::json to_json(const ArchConfig& c) {
    return {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"channels", c.channels},
            {"dim", c.dim},               {"heads", c.heads},           {"depth", c.depth},
            {"mlp_ratio", c.mlp_ratio},   {"num_classes", c.num_classes}, {"ln_eps", c.ln_eps}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
    ArchConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.channels = j.value("channels", c.channels);
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.depth = j.value("depth", c.depth);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.ln_eps = j.value("ln_eps", c.ln_eps);
    c.validate();
    return c;
}

nlohmann::json to_json(const AtsConfig& c) {
    return {{"stages", c.stages},
            {"budget", c.budget},
            {"inverse_rule", to_string(c.rule)},
            {"policy", to_string(c.policy)},
            {"scoring", to_string(c.scoring)},
            {"seed", c.seed}};
}

AtsConfig ats_from_json(const nlohmann::json& j) {
    AtsConfig c;
    c.stages = j.value("stages", c.stages);
    c.budget = j.value("budget", c.budget);
    c.rule = parse_inverse_rule(j.value("inverse_rule", std::string(to_string(c.rule))));
    c.policy = parse_policy(j.value("policy", std::string(to_string(c.policy))));
    c.scoring = parse_scoring(j.value("scoring", std::string(to_string(c.scoring))));
    c.seed = j.value("seed", c.seed);
    return c;
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ArchConfig& arch) {
    arch.validate();
    const std::size_t d = arch.dim;
    std::vector<std::pair<std::string, Shape>> out = {
        {"patch_embed.weight", {arch.patch_dim(), d}},
        {"patch_embed.bias", {d}},
        {"cls_token", {1, d}},
        {"pos_embed", {arch.tokens(), d}},
    };
    for (std::size_t b = 0; b < arch.depth; ++b) {
        const std::string p = "blocks." + std::to_string(b) + ".";
        out.push_back({p + "norm1.weight", {d}});
        out.push_back({p + "norm1.bias", {d}});
        out.push_back({p + "attn.qkv.weight", {d, 3 * d}});
        out.push_back({p + "attn.qkv.bias", {3 * d}});
        out.push_back({p + "attn.proj.weight", {d, d}});
        out.push_back({p + "attn.proj.bias", {d}});
        out.push_back({p + "norm2.weight", {d}});
        out.push_back({p + "norm2.bias", {d}});
        out.push_back({p + "mlp.fc1.weight", {d, arch.hidden_dim()}});
        out.push_back({p + "mlp.fc1.bias", {arch.hidden_dim()}});
        out.push_back({p + "mlp.fc2.weight", {arch.hidden_dim(), d}});
        out.push_back({p + "mlp.fc2.bias", {d}});
    }
    out.push_back({"norm.weight", {d}});
    out.push_back({"norm.bias", {d}});
    out.push_back({"head.weight", {d, arch.num_classes}});
    out.push_back({"head.bias", {arch.num_classes}});
    return out;
}

template <typename T>
Model<T> Model<T>::zeros(const ArchConfig& arch) {
    Model m;
    m.arch_ = arch;
    for (auto& [name, shape] : parameter_layout(arch)) {
        Parameter<T> p;
        p.name = name;
        p.value = Tensor<T>(shape);
        p.decay = name.ends_with(".weight") && shape.size() == 2;
        m.params_.push_back(std::move(p));
    }
    return m;
}

template <typename T>
Model<T> Model<T>::initialize(const ArchConfig& arch, std::uint64_t seed) {
    Model m = zeros(arch);
    Rng root(seed);
    for (std::size_t i = 0; i < m.params_.size(); ++i) {
        Parameter<T>& p = m.params_[i];
        const bool is_norm_gain = p.name.ends_with("norm1.weight") || p.name.ends_with("norm2.weight") ||
                                  p.name == "norm.weight";
        if (is_norm_gain) {
            p.value.fill(T{1});
        } else if (p.value.rank() == 2) {
            Rng rng = root.derive(i);
            for (auto& v : p.value.data()) {
                double z = rng.normal();
                while (std::abs(z) > 2.0) z = rng.normal();
                v = static_cast<T>(0.02 * z);
            }
        }
    }
    return m;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

template <typename T>
Parameter<T>& Model<T>::at(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return p;
    throw ContractError("no parameter named '" + name + "'");
}

template <typename T>
const Parameter<T>& Model<T>::at(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p;
    throw ContractError("no parameter named '" + name + "'");
}

template <typename T>
void Model<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, const ArchConfig& arch) {
    const std::size_t s = arch.image_size, ps = arch.patch_size, c = arch.channels;
    if (image.shape() != Shape{s, s, c}) {
        throw DimensionError("image shape " + shape_string(image.shape()) + " does not match expected " +
                             shape_string({s, s, c}));
    }
    const std::size_t g = arch.grid();
    Tensor<T> out({g * g, arch.patch_dim()});
    for (std::size_t gy = 0; gy < g; ++gy) {
        for (std::size_t gx = 0; gx < g; ++gx) {
            auto row = out.row(gy * g + gx);
            std::size_t k = 0;
            for (std::size_t dy = 0; dy < ps; ++dy)
                for (std::size_t dx = 0; dx < ps; ++dx)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        row[k++] = image[((gy * ps + dy) * s + (gx * ps + dx)) * c + ch];
        }
    }
    return out;
}

template <typename T>
BoundModel<T> bind_model(Tape<T>& tape, const Model<T>& model, std::span<Tensor<T>> grad_sinks) {
    const auto& params = model.parameters();
    if (!grad_sinks.empty() && grad_sinks.size() != params.size()) {
        throw ContractError("bind: need one gradient sink per parameter");
    }
    BoundModel<T> b;
    b.model = &model;
    b.vars.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        b.vars.push_back(grad_sinks.empty() ? tape.param(params[i]) : tape.param(params[i].value, grad_sinks[i]));
    }
    return b;
}

template <typename T>
Var<T> patch_embed(const BoundModel<T>& m, const Tensor<T>& image) {
    const ArchConfig& arch = m.model->arch();
    Tape<T>& tape = m[0].tape();
    Var<T> patches = tape.constant(extract_patches(image, arch));
    Var<T> projected = linear(patches, m[0], m[1]);
    return add(concat_rows(m[2], projected), m[3]);
}

template <typename T>
Var<T> transformer_block(const BoundModel<T>& m, std::size_t block, Var<T> x, const AtsConfig* ats,
                         std::size_t stage_position, std::uint64_t sample_seed, StageTrace& trace,
                         const SampleResult* frozen) {
    const ArchConfig& arch = m.model->arch();
    auto p = [&](BlockSlot s) { return m[block_slot(block, s)]; };
    trace.block = block;
    trace.tokens_in = x.value().rows();

    Var<T> h = layer_norm(x, p(kNorm1W), p(kNorm1B), arch.ln_eps);
    AttentionState<T> state = project_qkv(h, p(kQkvW), p(kQkvB), arch.attention());
    attention_matrix(state, arch.attention().head_dim());

    Var<T> attn_out;
    if (ats != nullptr || frozen != nullptr) {
        SampleResult result;
        if (frozen != nullptr) {
            if (frozen->kept.empty() || frozen->kept.back() >= trace.tokens_in) {
                throw DimensionError("transformer_block: frozen indices out of range");
            }
            result = *frozen;
        } else {
            const std::uint64_t stage_seed = mix64(mix64(ats->seed ^ mix64(sample_seed)) + block);
            const auto attn = state.attention_values();
            const auto values = state.value_values();
            ScoreVector sv = compute_scores<T>(attn, values, ats->scoring, stage_seed);
            SamplerConfig sampler;
            sampler.budget = std::min(ats->budget_for(stage_position), trace.tokens_in - 1);
            sampler.rule = ats->rule;
            sampler.policy = ats->policy;
            sampler.seed = mix64(stage_seed + 1);
            result = sample_indices(sv, sampler);
        }
        attn_out = ats_attend(state, result, p(kProjW), p(kProjB));
        if (result.k_prime + 1 != trace.tokens_in) x = gather_rows(x, std::span<const std::size_t>(result.kept));
        std::vector<std::size_t> mapped;
        mapped.reserve(result.kept.size());
        for (auto k : result.kept) mapped.push_back(trace.kept_original.empty() ? k : trace.kept_original.at(k));
        trace.kept_original = std::move(mapped);
        trace.sample = std::move(result);
    } else {
        attn_out = attend(state, p(kProjW), p(kProjB));
    }
    x = add(x, attn_out);
    Var<T> h2 = layer_norm(x, p(kNorm2W), p(kNorm2B), arch.ln_eps);
    Var<T> mlp = linear(gelu(linear(h2, p(kFc1W), p(kFc1B))), p(kFc2W), p(kFc2B));
    x = add(x, mlp);
    trace.tokens_out = x.value().rows();
    return x;
}

template <typename T>
ForwardOutput<T> forward(const BoundModel<T>& m, const Tensor<T>& image, const AtsConfig& ats,
                         std::uint64_t sample_seed) {
    const ArchConfig& arch = m.model->arch();
    ats.validate(arch);
    ForwardOutput<T> out;
    Var<T> x = patch_embed(m, image);
    std::vector<std::size_t> identity(arch.tokens());
    std::iota(identity.begin(), identity.end(), std::size_t{0});
    std::size_t stage_position = 0;
    for (std::size_t b = 0; b < arch.depth; ++b) {
        StageTrace st;
        st.kept_original = out.trace.stages.empty() ? identity : out.trace.stages.back().kept_original;
        const bool sampled = ats.is_stage(b);
        x = transformer_block(m, b, x, sampled ? &ats : nullptr, stage_position, sample_seed, st);
        if (sampled) ++stage_position;
        out.trace.stages.push_back(std::move(st));
    }
    const std::size_t cls_row = 0;
    Var<T> cls = gather_rows(x, std::span<const std::size_t>(&cls_row, 1));
    Var<T> normed = layer_norm(cls, m[tail_slot(arch, 0)], m[tail_slot(arch, 1)], arch.ln_eps);
    out.logits = linear(normed, m[tail_slot(arch, 2)], m[tail_slot(arch, 3)]);
    const auto& lv = out.logits.value();
    out.trace.logits.assign(lv.data().begin(), lv.data().end());
    out.trace.predicted = static_cast<std::size_t>(
        std::max_element(out.trace.logits.begin(), out.trace.logits.end()) - out.trace.logits.begin());
    return out;
}

template <typename T>
ForwardTrace forward(const Model<T>& model, const Tensor<T>& image, const AtsConfig& ats, std::uint64_t sample_seed) {
    Tape<T> tape(false);
    BoundModel<T> bound = bind_model(tape, model);
    return forward(bound, image, ats, sample_seed).trace;
}

nlohmann::json to_json(const ForwardTrace& t) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : t.stages) {
        nlohmann::json js = {{"block", s.block}, {"tokens_in", s.tokens_in}, {"tokens_out", s.tokens_out}};
        if (s.sample) js["sample"] = to_json(*s.sample);
        js["kept_original"] = s.kept_original;
        stages.push_back(std::move(js));
    }
    return {{"schema", 1}, {"stages", stages}, {"logits", t.logits}, {"predicted", t.predicted}};
}

#define ATS_INSTANTIATE_MODEL(T)                                                                                  \
    template class Model<T>;                                                                                      \
    template Tensor<T> extract_patches(const Tensor<T>&, const ArchConfig&);                                      \
    template BoundModel<T> bind_model(Tape<T>&, const Model<T>&, std::span<Tensor<T>>);                                 \
    template Var<T> patch_embed(const BoundModel<T>&, const Tensor<T>&);                                          \
    template Var<T> transformer_block(const BoundModel<T>&, std::size_t, Var<T>, const AtsConfig*, std::size_t,  \
                                      std::uint64_t, StageTrace&, const SampleResult*);                                                \
    template ForwardOutput<T> forward(const BoundModel<T>&, const Tensor<T>&, const AtsConfig&, std::uint64_t);   \
    template ForwardTrace forward(const Model<T>&, const Tensor<T>&, const AtsConfig&, std::uint64_t);

ATS_INSTANTIATE_MODEL(float)
ATS_INSTANTIATE_MODEL(double)

}  // namespace ats
