// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ats/model.hpp"

namespace ats {

/// Multiply-accumulate counts (1 MAC = 2 FLOPs). Softmax, LayerNorm and GELU
/// are not MACs; their elementwise work is estimated separately.
struct BlockMacs {
    std::uint64_t attn = 0;
    std::uint64_t mlp = 0;
    std::size_t tokens_in = 0;
    std::size_t tokens_out = 0;
};

struct FlopsReport {
    std::vector<BlockMacs> per_stage;
    std::uint64_t embed_macs = 0;
    std::uint64_t head_macs = 0;
    std::uint64_t total_macs = 0;
    /// Rough count of softmax/LayerNorm/GELU element operations; excluded
    /// from total_macs.
    std::uint64_t elementwise_estimate = 0;
};

/// attn = 3·t_in·d²          (QKV over every input token)
///      + t_in·t_in·d        (scores, computed before sampling)
///      + t_out·t_in·d       (A^s·V)
///      + t_out·d²           (output projection)
/// mlp  = 2·mlp_ratio·t_out·d²
/// `heads` does not change the count; it is validated only.
BlockMacs block_macs(std::size_t tokens_in, std::size_t tokens_out, std::size_t dim, std::size_t heads,
                     std::size_t mlp_ratio);

/// Sums block costs along the traced token counts plus patch embedding
/// (N·patch_dim·d) and the classifier head (d·classes).
FlopsReport model_macs(const ForwardTrace& trace, const ArchConfig& arch);

/// Cost of the static (sampler-free) network.
FlopsReport baseline_macs(const ArchConfig& arch);

nlohmann::json to_json(const FlopsReport& r);
std::string flops_csv_header(std::size_t depth);
std::string flops_csv_row(const FlopsReport& r);

}  // namespace ats
