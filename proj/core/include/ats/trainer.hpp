// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ats/dataset.hpp"
#include "ats/flops.hpp"
#include "ats/model.hpp"

namespace ats {

/// Linear warmup to base_lr, then half-cosine decay to zero at total_steps.
struct Schedule {
    double base_lr = 5e-4;
    std::size_t total_steps = 1;
    std::size_t warmup_steps = 0;

    double lr_at(std::size_t step) const;
};

/// Adam moments with weight decay applied directly to the parameter
/// (p ← p·(1 − lr·wd)) for parameters flagged `decay`.
template <typename T>
struct OptimState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
    std::size_t step = 0;
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
};

/// One update from params[i].grad. Throws NumericError naming the first
/// parameter with a non-finite gradient; nothing is modified in that case.
template <typename T>
void optim_step(OptimState<T>& state, std::vector<Parameter<T>>& params, double lr);

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    double base_lr = 5e-4;
    double weight_decay = 0.05;
    std::size_t warmup_epochs = 2;
    std::uint64_t seed = 0;
    /// Sampler used during training; empty stages trains the plain network.
    AtsConfig ats;
    std::size_t threads = 0;  ///< 0 → worker_count()
    /// Per-epoch progress sink (may be empty).
    std::function<void(const std::string&)> log;
};

/// One row of the metric log.
struct EpochMetrics {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double top1 = 0.0;
    std::vector<double> mean_kprime;  ///< one per ATS stage
    double mean_macs = 0.0;
};

struct TrainLog {
    std::vector<EpochMetrics> rows;
    std::vector<std::size_t> ats_stages;
};

std::string metrics_csv_header(const std::vector<std::size_t>& ats_stages);
void write_metrics_csv(std::ostream& os, const TrainLog& log);
/// Validates the schema column and column count.
TrainLog read_metrics_csv(std::istream& is);

/// Per-image inference record.
struct ImageResult {
    std::size_t label = 0;
    std::size_t predicted = 0;
    double loss = 0.0;
    double clutter = 0.0;
    std::vector<std::size_t> kprime;  ///< one per ATS stage
    std::uint64_t macs = 0;
    ForwardTrace trace;
};

struct EvalResult {
    std::vector<ImageResult> images;
    double top1 = 0.0;
    double loss = 0.0;
    double mean_macs = 0.0;
    std::vector<double> mean_kprime;
};

/// Sample seed for image i is `ats.seed`-independent: mix64(seed_base + i).
template <typename T>
EvalResult evaluate(const Model<T>& model, const std::vector<ShapeSample>& samples, const AtsConfig& ats,
                    std::size_t threads = 0, std::uint64_t seed_base = 0);

/// Cross-entropy training with AdamW and the cosine schedule. Batch order
/// is a seeded shuffle per epoch. Gradients are reduced over fixed chunks of
/// the batch in index order, so results do not depend on thread count.
/// Throws NumericError if the loss diverges.
template <typename T>
TrainLog train(Model<T>& model, const Dataset& data, const TrainConfig& config);

/// train() with config.ats active; the sampler grid is deterministic, and
/// gradients flow through A^s and V only.
template <typename T>
TrainLog fine_tune(Model<T>& model, const Dataset& data, const TrainConfig& config);

}  // namespace ats
