// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ats/dataset.hpp"
#include "ats/model.hpp"
#include "ats/trainer.hpp"

namespace ats::cli {

/// Exit codes of run().
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Everything a `--config` file can set. Sections and keys are optional;
/// missing values keep their defaults.
///
///   {"schema": 1,
///    "arch":    {image_size, patch_size, channels, dim, heads, depth, mlp_ratio, num_classes, ln_eps},
///    "dataset": {seed, n_train, n_val, clutter_alpha, clutter_beta, fixed_clutter, image_size},
///    "train":   {epochs, finetune_epochs, batch_size, base_lr, weight_decay, warmup_epochs},
///    "ats":     {stages, budget, inverse_rule, policy, scoring, seed}}
struct RunConfig {
    ArchConfig arch;
    DatasetManifest dataset;
    std::size_t epochs = 30;
    std::size_t finetune_epochs = 10;
    std::size_t batch_size = 64;
    double base_lr = 5e-4;
    double weight_decay = 0.05;
    std::size_t warmup_epochs = 2;
    std::optional<AtsConfig> ats;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// "2,3,4,5" → {2,3,4,5}; "" and "none" → {}.
std::vector<std::size_t> parse_index_list(const std::string& text);
/// "N" → {n}; "8" → {8}; "8,6,4" → per-stage list. "N" may appear in lists.
std::vector<std::size_t> parse_budget(const std::string& text, std::size_t n);

/// Largest K in [1, N] whose mean MACs on `samples` stay within
/// `fraction` of the baseline, by bisection over K. Falls back to K = 1
/// when even that exceeds the target.
struct BudgetChoice {
    std::size_t budget = 1;
    double fraction = 1.0;  ///< achieved mean-MAC fraction at `budget`
};
BudgetChoice resolve_mac_fraction(const Model<float>& model, const std::vector<ShapeSample>& samples, AtsConfig ats,
                                  double fraction, std::size_t threads, std::uint64_t seed_base);

/// The `eval` JSON document.
nlohmann::json eval_report(const EvalResult& result, const ArchConfig& arch, const AtsConfig& ats);

/// Runs one command line (args excludes the program name). Usage errors
/// return kExitUsage, runtime failures kExitFailure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ats::cli
