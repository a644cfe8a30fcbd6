// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "ats/flops.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

namespace ats {

BlockMacs block_macs(std::size_t tokens_in, std::size_t tokens_out, std::size_t dim, std::size_t heads,
                     std::size_t mlp_ratio) {
    if (tokens_out == 0 || tokens_out > tokens_in) {
        throw ContractError("block_macs: need 1 <= t_out <= t_in, got t_in=" + std::to_string(tokens_in) +
                            " t_out=" + std::to_string(tokens_out));
    }
    AttentionConfig{dim, heads}.validate();
    const std::uint64_t ti = tokens_in, to = tokens_out, d = dim;
    BlockMacs m;
    m.tokens_in = tokens_in;
    m.tokens_out = tokens_out;
    m.attn = 3 * ti * d * d + ti * ti * d + to * ti * d + to * d * d;
    m.mlp = 2 * static_cast<std::uint64_t>(mlp_ratio) * to * d * d;
    return m;
}

namespace {

std::uint64_t elementwise_for_block(const ArchConfig& arch, std::uint64_t ti, std::uint64_t to) {
    const std::uint64_t d = arch.dim, h = arch.heads;
    const std::uint64_t softmax = 3 * h * ti * ti;
    const std::uint64_t norms = 5 * (ti + to) * d;
    const std::uint64_t gelu = to * arch.hidden_dim();
    return softmax + norms + gelu;
}

FlopsReport assemble(const ArchConfig& arch, const std::vector<std::pair<std::size_t, std::size_t>>& counts) {
    FlopsReport r;
    r.embed_macs = static_cast<std::uint64_t>(arch.num_patches()) * arch.patch_dim() * arch.dim;
    r.head_macs = static_cast<std::uint64_t>(arch.dim) * arch.num_classes;
    r.total_macs = r.embed_macs + r.head_macs;
    for (auto [ti, to] : counts) {
        BlockMacs b = block_macs(ti, to, arch.dim, arch.heads, arch.mlp_ratio);
        r.total_macs += b.attn + b.mlp;
        r.elementwise_estimate += elementwise_for_block(arch, ti, to);
        r.per_stage.push_back(b);
    }
    r.elementwise_estimate += 5 * static_cast<std::uint64_t>(arch.dim);
    return r;
}

}  // namespace

FlopsReport model_macs(const ForwardTrace& trace, const ArchConfig& arch) {
    if (trace.stages.size() != arch.depth) {
        throw ContractError("model_macs: trace has " + std::to_string(trace.stages.size()) + " stages, config depth " +
                            std::to_string(arch.depth));
    }
    std::vector<std::pair<std::size_t, std::size_t>> counts;
    std::size_t expected_in = arch.tokens();
    for (const auto& s : trace.stages) {
        if (s.tokens_in != expected_in || s.tokens_out > s.tokens_in || s.tokens_out == 0) {
            throw ContractError("model_macs: inconsistent token counts at block " + std::to_string(s.block));
        }
        counts.emplace_back(s.tokens_in, s.tokens_out);
        expected_in = s.tokens_out;
    }
    return assemble(arch, counts);
}

FlopsReport baseline_macs(const ArchConfig& arch) {
    std::vector<std::pair<std::size_t, std::size_t>> counts(arch.depth, {arch.tokens(), arch.tokens()});
    return assemble(arch, counts);
}

nlohmann::json to_json(const FlopsReport& r) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : r.per_stage) {
        stages.push_back(
            {{"attn_macs", s.attn}, {"mlp_macs", s.mlp}, {"tokens_in", s.tokens_in}, {"tokens_out", s.tokens_out}});
    }
    return {{"schema", 1},
            {"per_stage", stages},
            {"embed_macs", r.embed_macs},
            {"head_macs", r.head_macs},
            {"total_macs", r.total_macs},
            {"elementwise_estimate", r.elementwise_estimate}};
}

std::string flops_csv_header(std::size_t depth) {
    std::ostringstream os;
    os << "schema,total_macs,embed_macs,head_macs";
    for (std::size_t i = 0; i < depth; ++i) os << ",b" << i << "_attn,b" << i << "_mlp,b" << i << "_tokens_out";
    return os.str();
}

std::string flops_csv_row(const FlopsReport& r) {
    std::ostringstream os;
    os << 1 << ',' << r.total_macs << ',' << r.embed_macs << ',' << r.head_macs;
    for (const auto& s : r.per_stage) os << ',' << s.attn << ',' << s.mlp << ',' << s.tokens_out;
    return os.str();
}

}  // namespace ats
