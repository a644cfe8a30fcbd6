// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "ats/ats.hpp"
#include "ats/dataset.hpp"
#include "ats/flops.hpp"
#include "ats/model.hpp"
#include "ats/rng.hpp"

namespace {

std::vector<double> random_scores(std::size_t n, std::uint64_t seed) {
    ats::Rng rng(seed);
    std::vector<double> s(n);
    for (auto& v : s) v = rng.uniform();
    return s;
}

void BM_SampleIndices(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto sv = ats::build_cdf(random_scores(n, 1));
    ats::SamplerConfig cfg;
    cfg.budget = n;
    for (auto _ : state) benchmark::DoNotOptimize(ats::sample_indices(sv, cfg));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_SampleIndices)->Arg(16)->Arg(64)->Arg(196)->Arg(1024);

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    ats::Rng rng(2);
    ats::Tensor<float> a({n, n}), b({n, n});
    for (auto& v : a.data()) v = static_cast<float>(rng.uniform());
    for (auto& v : b.data()) v = static_cast<float>(rng.uniform());
    for (auto _ : state) benchmark::DoNotOptimize(ats::matmul(a, b));
    state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(n * n * n) * static_cast<double>(state.iterations()),
                                                 benchmark::Counter::kIsRate);
}
BENCHMARK(BM_Matmul)->Arg(17)->Arg(64)->Arg(128);

void BM_Forward(benchmark::State& state) {
    const ats::ArchConfig arch;
    const auto model = ats::Model<float>::initialize(arch, 3);
    ats::Rng rng(4);
    const auto image = ats::render_sample(1, 0.5, rng).image;
    ats::AtsConfig cfg;
    if (state.range(0) > 0) {
        cfg = ats::AtsConfig::defaults(arch);
        cfg.budget = {static_cast<std::size_t>(state.range(0))};
    }
    for (auto _ : state) benchmark::DoNotOptimize(ats::forward(model, image, cfg));
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(16)->Arg(8)->Arg(4)->ArgName("K");

void BM_BlockMacs(benchmark::State& state) {
    std::size_t t = 1;
    for (auto _ : state) {
        benchmark::DoNotOptimize(ats::block_macs(197, t, 768, 12, 4));
        t = t % 197 + 1;
    }
}
BENCHMARK(BM_BlockMacs);

}  // namespace

BENCHMARK_MAIN();
