// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "ats/ats.hpp"
#include "ats/rng.hpp"
#include "oracles.hpp"

using namespace ats;

namespace {

Tensor<double> randn(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
}

/// Random scores with a mix of spiky and flat profiles.
std::vector<double> random_scores(Rng& rng, std::size_t n) {
    std::vector<double> s(n);
    const double spike = rng.uniform() < 0.5 ? 0.0 : rng.uniform(1.0, 20.0);
    for (auto& v : s) v = rng.uniform() + (rng.uniform() < 0.2 ? spike : 0.0);
    return s;
}

SampleResult ceil_sample(const ScoreVector& sv, std::size_t k) {
    SamplerConfig cfg;
    cfg.budget = k;
    return sample_indices(sv, cfg);
}

/// Attention state over [T × d] tokens with `heads` heads on a fresh tape.
struct Block {
    Tensor<double> qkv_w, qkv_b, proj_w, proj_b;
    std::size_t heads;

    AttentionState<double> state(Tape<double>& tape, Var<double> x) const {
        AttentionConfig cfg{qkv_w.rows(), heads};
        auto s = project_qkv(x, tape.constant(qkv_w), tape.constant(qkv_b), cfg);
        attention_matrix(s, cfg.head_dim());
        return s;
    }
};

Block random_block(Rng& rng, std::size_t d, std::size_t heads) {
    return {randn(rng, {d, 3 * d}, 0.5), randn(rng, {3 * d}, 0.1), randn(rng, {d, d}, 0.5), randn(rng, {d}, 0.1),
            heads};
}

}  // namespace

TEST_CASE("names round-trip") {
    for (auto m : {ScoringMethod::cls_attn_vnorm, ScoringMethod::cls_attn, ScoringMethod::rowsum_attn,
                   ScoringMethod::random_token})
        CHECK(parse_scoring(to_string(m)) == m);
    for (auto r : {InverseRule::ceil, InverseRule::nearest}) CHECK(parse_inverse_rule(to_string(r)) == r);
    for (auto p : {SamplingPolicy::inverse_transform, SamplingPolicy::topk, SamplingPolicy::random})
        CHECK(parse_policy(to_string(p)) == p);
    CHECK(parse_scoring("cls-vnorm") == ScoringMethod::cls_attn_vnorm);
    CHECK(parse_policy("inverse") == SamplingPolicy::inverse_transform);
    CHECK_THROWS(parse_policy("sometimes"));
}

TEST_CASE("compute_scores") {
    auto values = [](std::vector<double> norms) {
        Tensor<double> v({norms.size(), 2});
        for (std::size_t i = 0; i < norms.size(); ++i) {
            v(i, 0) = 0.6 * norms[i];
            v(i, 1) = -0.8 * norms[i];
        }
        return v;
    };
    SUBCASE("equal weighted scores") {
        std::vector<Tensor<double>> a{Tensor<double>::matrix(3, 3, {0.2, 0.4, 0.4, 1, 0, 0, 1, 0, 0})};
        std::vector<Tensor<double>> v{values({5, 1, 1})};
        const auto sv = compute_scores<double>(a, v, ScoringMethod::cls_attn_vnorm);
        CHECK(sv.scores[0] == doctest::Approx(0.5));
        CHECK(sv.scores[1] == doctest::Approx(0.5));
        CHECK_FALSE(sv.uniform_fallback);
    }
    SUBCASE("value norms reweight the attention") {
        std::vector<Tensor<double>> a{Tensor<double>::matrix(3, 3, {0.1, 0.6, 0.3, 1, 0, 0, 1, 0, 0})};
        std::vector<Tensor<double>> v{values({3, 1, 2})};
        const auto sv = compute_scores<double>(a, v, ScoringMethod::cls_attn_vnorm);
        CHECK(sv.scores[0] == doctest::Approx(0.5));
        CHECK(sv.scores[1] == doctest::Approx(0.5));
        const auto plain = compute_scores<double>(a, v, ScoringMethod::cls_attn);
        CHECK(plain.scores[0] == doctest::Approx(2.0 / 3.0));
        const auto rowsum = compute_scores<double>(a, v, ScoringMethod::rowsum_attn);
        CHECK(rowsum.scores[0] == doctest::Approx(2.0 / 3.0));
    }
    SUBCASE("zero values fall back to uniform") {
        std::vector<Tensor<double>> a{Tensor<double>({4, 4}, 0.25)};
        std::vector<Tensor<double>> v{Tensor<double>({4, 3})};
        const auto sv = compute_scores<double>(a, v, ScoringMethod::cls_attn_vnorm);
        CHECK(sv.uniform_fallback);
        for (auto s : sv.scores) CHECK(s == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("heads are summed before normalizing") {
        std::vector<Tensor<double>> a{Tensor<double>::matrix(3, 3, {0, 1, 0, 1, 0, 0, 1, 0, 0}),
                                      Tensor<double>::matrix(3, 3, {0, 0.5, 0.5, 1, 0, 0, 1, 0, 0})};
        std::vector<Tensor<double>> v{values({1, 1, 1}), values({1, 1, 1})};
        const auto sv = compute_scores<double>(a, v, ScoringMethod::cls_attn);
        CHECK(sv.scores[0] == doctest::Approx(0.75));
        CHECK(sv.scores[1] == doctest::Approx(0.25));
    }
    SUBCASE("random-token uses one non-CLS row chosen by the seed") {
        std::vector<Tensor<double>> a{Tensor<double>::matrix(3, 3, {0, 1, 0, 0, 0.9, 0.1, 0, 0.2, 0.8})};
        std::vector<Tensor<double>> v{values({1, 1, 1})};
        bool saw_row1 = false, saw_row2 = false;
        for (std::uint64_t seed = 0; seed < 32; ++seed) {
            const auto sv = compute_scores<double>(a, v, ScoringMethod::random_token, seed);
            saw_row1 |= std::abs(sv.scores[0] - 0.9) < 1e-12;
            saw_row2 |= std::abs(sv.scores[0] - 0.2) < 1e-12;
            CHECK(sv.scores == compute_scores<double>(a, v, ScoringMethod::random_token, seed).scores);
        }
        CHECK(saw_row1);
        CHECK(saw_row2);
    }
    SUBCASE("a lone CLS token is rejected") {
        std::vector<Tensor<double>> a{Tensor<double>({1, 1}, 1.0)};
        std::vector<Tensor<double>> v{Tensor<double>({1, 2}, 1.0)};
        CHECK_THROWS_AS(compute_scores<double>(a, v, ScoringMethod::cls_attn), ContractError);
    }
}

TEST_CASE("scores are normalized for every variant, N and head count") {
    Rng rng(1);
    for (std::size_t n : {1, 4, 16, 64, 256})
        for (std::size_t heads : {1, 2, 4})
            for (auto method : {ScoringMethod::cls_attn_vnorm, ScoringMethod::cls_attn, ScoringMethod::rowsum_attn,
                                ScoringMethod::random_token}) {
                std::vector<Tensor<double>> a, v;
                for (std::size_t h = 0; h < heads; ++h) {
                    a.push_back(softmax_rows(randn(rng, {n + 1, n + 1}, 3.0)));
                    v.push_back(randn(rng, {n + 1, 4}));
                }
                const auto sv = compute_scores<double>(a, v, method, rng.next_u64());
                CHECK(std::abs(std::accumulate(sv.scores.begin(), sv.scores.end(), 0.0) - 1.0) <= 1e-6);
                CHECK(sv.cdf.back() == 1.0);
                for (std::size_t i = 1; i < n; ++i) CHECK(sv.cdf[i] >= sv.cdf[i - 1]);
            }
}

TEST_CASE("permuting non-CLS tokens permutes the scores") {
    Rng rng(2);
    const std::size_t n = 10;
    std::vector<Tensor<double>> a{softmax_rows(randn(rng, {n + 1, n + 1}, 2.0))};
    std::vector<Tensor<double>> v{randn(rng, {n + 1, 3})};
    std::vector<std::size_t> perm(n + 1);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm).subspan(1));
    // Token i of the permuted sequence is token perm[i] of the original.
    Tensor<double> ap({n + 1, n + 1});
    for (std::size_t i = 0; i <= n; ++i)
        for (std::size_t j = 0; j <= n; ++j) ap(i, j) = a[0](perm[i], perm[j]);
    std::vector<Tensor<double>> pa{ap};
    std::vector<Tensor<double>> pv{gather_rows(v[0], perm)};
    for (auto method : {ScoringMethod::cls_attn_vnorm, ScoringMethod::cls_attn, ScoringMethod::rowsum_attn}) {
        const auto s = compute_scores<double>(a, v, method);
        const auto sp = compute_scores<double>(pa, pv, method);
        for (std::size_t i = 1; i <= n; ++i) CHECK(std::abs(sp.scores[i - 1] - s.scores[perm[i] - 1]) <= 1e-12);
    }
}

TEST_CASE("build_cdf") {
    CHECK(build_cdf({0.5, 0.25, 0.25}).cdf == std::vector<double>{0.5, 0.75, 1.0});
    CHECK(build_cdf({1, 1, 1, 1}).cdf == std::vector<double>{0.25, 0.5, 0.75, 1.0});
    CHECK(build_cdf({1.0}).cdf == std::vector<double>{1.0});
    // Rounding can push a prefix sum past 1; entries are clamped.
    const auto sv = build_cdf({0.1, 0.2, 0.3, 0.4, 1e-17});
    CHECK(sv.cdf.back() == 1.0);
    for (double c : sv.cdf) CHECK(c <= 1.0);
}

TEST_CASE("sampler config") {
    SamplerConfig cfg;
    cfg.budget = 3;
    const auto g = cfg.grid();
    CHECK(g.size() == 3);
    CHECK(g.back() == 1.0);
    CHECK(std::is_sorted(g.begin(), g.end()));
    cfg.budget = 0;
    CHECK_THROWS_AS(cfg.validate(), ContractError);
    CHECK_THROWS_AS(sample_indices(ScoreVector{}, SamplerConfig{}), ContractError);
}

TEST_CASE("sample_indices under the ceil rule") {
    SUBCASE("repeated picks collapse") {
        const auto r = ceil_sample(build_cdf({0.5, 0.25, 0.25}), 4);
        CHECK(r.psi == std::vector<double>{1, 1, 2, 3});
        CHECK(r.kept == std::vector<std::size_t>{0, 1, 2, 3});
        CHECK(r.k_prime == 3);
    }
    SUBCASE("balanced scores keep K tokens") {
        const auto r = ceil_sample(build_cdf({1, 1, 1, 1}), 4);
        CHECK(r.kept == std::vector<std::size_t>{0, 1, 2, 3, 4});
        CHECK(r.k_prime == 4);
    }
    SUBCASE("a dominant token shrinks K'") {
        const auto r = ceil_sample(build_cdf({0.9, 0.05, 0.05}), 4);
        CHECK(r.psi == std::vector<double>{1, 1, 1, 3});
        CHECK(r.kept == std::vector<std::size_t>{0, 1, 3});
        CHECK(r.k_prime == 2);
    }
}

TEST_CASE("sample_indices under the nearest rule interpolates the cdf") {
    SamplerConfig cfg;
    cfg.rule = InverseRule::nearest;
    cfg.budget = 4;
    auto r = sample_indices(build_cdf({0.5, 0.25, 0.25}), cfg);
    CHECK(r.psi == std::vector<double>{0.5, 1.0, 2.0, 3.0});
    CHECK(r.kept == std::vector<std::size_t>{0, 1, 2, 3});
    cfg.budget = 2;
    r = sample_indices(build_cdf({0.1, 0.1, 0.8}), cfg);
    CHECK(r.psi[0] == doctest::Approx(2.375));
    CHECK(r.kept == std::vector<std::size_t>{0, 2, 3});
    CHECK(ceil_sample(build_cdf({0.1, 0.1, 0.8}), 2).kept == std::vector<std::size_t>{0, 3});
}

TEST_CASE("ceil rule equals a brute-force cdf scan on 1000 random score vectors") {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(16), k = 1 + rng.uniform_int(16);
        const auto sv = build_cdf(random_scores(rng, n));
        CHECK(ceil_sample(sv, k).kept == oracle::cdf_scan_kept(sv.scores, k));
    }
}

TEST_CASE("sampler invariants") {
    Rng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(16), k = 1 + rng.uniform_int(16);
        const auto sv = build_cdf(random_scores(rng, n));
        for (auto rule : {InverseRule::ceil, InverseRule::nearest}) {
            SamplerConfig cfg;
            cfg.budget = k;
            cfg.rule = rule;
            const auto r = sample_indices(sv, cfg);
            CHECK(r.kept.front() == 0);
            CHECK(std::adjacent_find(r.kept.begin(), r.kept.end(), std::greater_equal<>()) == r.kept.end());
            CHECK(r.k_prime + 1 == r.kept.size());
            CHECK(r.k_prime >= 1);
            CHECK(r.k_prime <= std::min(k, n));
            CHECK(r.psi.size() == k);
            CHECK(r.kept == sample_indices(sv, cfg).kept);
        }
        // Contraction: a score of at least 2/K covers two grid points.
        const double top = *std::max_element(sv.scores.begin(), sv.scores.end());
        if (top >= 2.0 / static_cast<double>(k)) CHECK(ceil_sample(sv, k).k_prime < k);
        // Refining the grid (K -> 2K keeps every old grid point) never loses a token.
        const auto coarse = ceil_sample(sv, k).kept;
        const auto fine = ceil_sample(sv, 2 * k).kept;
        CHECK(std::includes(fine.begin(), fine.end(), coarse.begin(), coarse.end()));
    }
}

TEST_CASE("K' is not monotone between consecutive budgets") {
    // cdf = [3/7, 4/7, 1]: K=4 hits 1/4, 2/4 and 3/4 in three different
    // tokens, while K=5 steps over the narrow middle interval.
    const auto sv = build_cdf({3, 1, 3});
    CHECK(ceil_sample(sv, 4).k_prime == 3);
    CHECK(ceil_sample(sv, 5).k_prime == 2);
    CHECK(ceil_sample(sv, 8).k_prime == 3);
}

TEST_CASE("topk and random policies") {
    const auto sv = build_cdf({0.1, 0.3, 0.3, 0.05, 0.25});
    SamplerConfig cfg;
    cfg.policy = SamplingPolicy::topk;
    cfg.budget = 2;
    CHECK(sample_indices(sv, cfg).kept == std::vector<std::size_t>{0, 2, 3});
    cfg.budget = 3;
    CHECK(sample_indices(sv, cfg).kept == std::vector<std::size_t>{0, 2, 3, 5});
    cfg.budget = 9;
    CHECK(sample_indices(sv, cfg).k_prime == 5);

    cfg.policy = SamplingPolicy::random;
    cfg.budget = 3;
    cfg.seed = 17;
    const auto a = sample_indices(sv, cfg);
    CHECK(a.k_prime == 3);
    CHECK(a.kept == sample_indices(sv, cfg).kept);
    std::vector<int> hits(6, 0);
    for (std::uint64_t seed = 0; seed < 3000; ++seed) {
        cfg.seed = seed;
        for (auto i : sample_indices(sv, cfg).kept) ++hits[i];
    }
    CHECK(hits[0] == 3000);
    for (std::size_t i = 1; i <= 5; ++i) CHECK(std::abs(hits[i] - 1800) < 150);
}

TEST_CASE("SampleResult JSON") {
    const auto r = ceil_sample(build_cdf({0.9, 0.05, 0.05}), 4);
    const auto back = sample_result_from_json(to_json(r));
    CHECK(back.kept == r.kept);
    CHECK(back.k_prime == r.k_prime);
    CHECK(back.psi == r.psi);
    auto j = to_json(r);
    j["kept"] = {1, 2};
    CHECK_THROWS_AS(sample_result_from_json(j), FormatError);
    j = to_json(r);
    j["kept"] = {0, 3, 3};
    CHECK_THROWS_AS(sample_result_from_json(j), FormatError);
    j = to_json(r);
    j.erase("psi");
    CHECK_THROWS_AS(sample_result_from_json(j), FormatError);
}

TEST_CASE("refine_attention") {
    Rng rng(5);
    const auto a = softmax_rows(randn(rng, {4, 4}));
    SampleResult all{{0, 1, 2, 3}, 3, {}};
    CHECK(refine_attention(a, all) == a);
    const auto cls = refine_attention(a, SampleResult{{0}, 0, {}});
    CHECK(cls.rows() == 1);
    CHECK(std::equal(cls.row(0).begin(), cls.row(0).end(), a.row(0).begin()));
    const auto two = refine_attention(a, SampleResult{{0, 2}, 1, {}});
    CHECK(std::equal(two.row(1).begin(), two.row(1).end(), a.row(2).begin()));
    for (std::size_t r = 0; r < two.rows(); ++r) {
        const auto row = two.row(r);
        CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-6);
    }
    CHECK_THROWS_AS(refine_attention(a, SampleResult{{0, 4}, 1, {}}), DimensionError);
}

TEST_CASE("ats_attend") {
    Rng rng(6);
    const std::size_t t = 7, d = 8;
    const auto blk = random_block(rng, d, 2);
    const auto x = randn(rng, {t, d});
    Tape<double> tape;
    const auto s = blk.state(tape, tape.constant(x));
    const auto vanilla = attend(s, tape.constant(blk.proj_w), tape.constant(blk.proj_b)).value();

    SUBCASE("keeping every token reproduces attend bitwise") {
        SampleResult all{{0, 1, 2, 3, 4, 5, 6}, 6, {}};
        CHECK(ats_attend(s, all, tape.constant(blk.proj_w), tape.constant(blk.proj_b)).value() == vanilla);
    }
    SUBCASE("keeping only CLS gives row 0") {
        const auto out = ats_attend(s, SampleResult{{0}, 0, {}}, tape.constant(blk.proj_w), tape.constant(blk.proj_b));
        CHECK(out.value().rows() == 1);
        for (std::size_t c = 0; c < d; ++c) CHECK(out.value()(0, c) == vanilla(0, c));
    }
    SUBCASE("matches the gathered oracle") {
        const std::vector<std::size_t> keep{0, 2, 3, 6};
        const auto out = ats_attend(s, SampleResult{keep, 3, {}}, tape.constant(blk.proj_w), tape.constant(blk.proj_b));
        const auto ref =
            oracle::attention(oracle::to_mat(x), blk.qkv_w, blk.qkv_b, blk.proj_w, blk.proj_b, 2, &keep).output;
        for (std::size_t r = 0; r < keep.size(); ++r)
            for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(out.value()(r, c) - ref[r][c]) <= 1e-9);
    }
}

TEST_CASE("ats_attend gradients match finite differences with frozen indices") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        const std::size_t t = 3 + rng.uniform_int(6), d = 4, heads = 1 + rng.uniform_int(2);
        const auto blk = random_block(rng, d, heads);
        const auto x0 = randn(rng, {t, d}, 0.7);
        Tape<double> probe;
        const auto ps = blk.state(probe, probe.constant(x0));
        const auto sv = compute_scores<double>(ps.attention_values(), ps.value_values(), ScoringMethod::cls_attn_vnorm);
        const auto frozen = ceil_sample(sv, 1 + rng.uniform_int(t - 1));
        const auto weights = randn(rng, {frozen.kept.size(), d});
        const double err = grad_check(
            [&](Tape<double>& tape, Var<double> x) {
                const auto s = blk.state(tape, x);
                auto out = ats_attend(s, frozen, tape.constant(blk.proj_w), tape.constant(blk.proj_b));
                return sum(mul(out, tape.constant(weights)));
            },
            x0);
        CHECK_MESSAGE(err <= 1e-6, "seed " << seed << " err " << err);
    }
}
