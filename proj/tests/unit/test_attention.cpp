// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ats/attention.hpp"
#include "ats/rng.hpp"
#include "oracles.hpp"

using namespace ats;

namespace {

Tensor<double> randn(Rng& rng, Shape shape, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
}

Tensor<double> identity(std::size_t n) {
    Tensor<double> t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
}

struct Weights {
    Tensor<double> qkv_w, qkv_b, proj_w, proj_b;

    static Weights random(Rng& rng, std::size_t d) {
        return {randn(rng, {d, 3 * d}, 0.4), randn(rng, {3 * d}, 0.1), randn(rng, {d, d}, 0.4), randn(rng, {d}, 0.1)};
    }
};

struct Run {
    AttentionState<double> state;
    Tensor<double> output;
};

Run run(Tape<double>& tape, const Tensor<double>& x, const Weights& w, const AttentionConfig& cfg) {
    auto state = project_qkv(tape.constant(x), tape.constant(w.qkv_w), tape.constant(w.qkv_b), cfg);
    attention_matrix(state, cfg.head_dim());
    auto out = attend(state, tape.constant(w.proj_w), tape.constant(w.proj_b));
    return {state, out.value()};
}

}  // namespace

TEST_CASE("config validation") {
    CHECK_THROWS_AS((AttentionConfig{6, 4}.validate()), ContractError);
    CHECK_THROWS_AS((AttentionConfig{4, 0}.validate()), ContractError);
    CHECK_NOTHROW((AttentionConfig{8, 2}.validate()));
}

TEST_CASE("project_qkv") {
    Rng rng(1);
    Tape<double> tape;
    SUBCASE("identity weights with one head copy the tokens") {
        const auto x = randn(rng, {3, 4});
        Tensor<double> w({4, 12});
        for (std::size_t blk = 0; blk < 3; ++blk)
            for (std::size_t i = 0; i < 4; ++i) w(i, blk * 4 + i) = 1.0;
        auto s = project_qkv(tape.constant(x), tape.constant(w), tape.constant(Tensor<double>({12})), {4, 1});
        CHECK(s.q[0].value() == x);
        CHECK(s.k[0].value() == x);
        CHECK(s.v[0].value() == x);
    }
    SUBCASE("zero weights give zero projections") {
        auto s = project_qkv(tape.constant(randn(rng, {3, 4})), tape.constant(Tensor<double>({4, 12})),
                             tape.constant(Tensor<double>({12})), {4, 2});
        for (std::size_t h = 0; h < 2; ++h) {
            CHECK(s.q[h].value() == Tensor<double>({3, 2}));
            CHECK(s.v[h].value() == Tensor<double>({3, 2}));
        }
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(project_qkv(tape.constant(randn(rng, {3, 4})), tape.constant(Tensor<double>({4, 8})),
                                    tape.constant(Tensor<double>({12})), {4, 2}),
                        DimensionError);
        CHECK_THROWS_AS(project_qkv(tape.constant(randn(rng, {3, 4})), tape.constant(Tensor<double>({4, 12})),
                                    tape.constant(Tensor<double>({11})), {4, 2}),
                        DimensionError);
    }
    SUBCASE("matches the oracle on a seeded case") {
        const auto x = randn(rng, {5, 8});
        const auto w = Weights::random(rng, 8);
        auto s = project_qkv(tape.constant(x), tape.constant(w.qkv_w), tape.constant(w.qkv_b), {8, 2});
        const auto ref = oracle::affine(oracle::to_mat(x), w.qkv_w, w.qkv_b);
        for (std::size_t h = 0; h < 2; ++h)
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t c = 0; c < 4; ++c) {
                    CHECK(std::abs(s.q[h].value()(i, c) - ref[i][h * 4 + c]) <= 1e-6);
                    CHECK(std::abs(s.k[h].value()(i, c) - ref[i][8 + h * 4 + c]) <= 1e-6);
                    CHECK(std::abs(s.v[h].value()(i, c) - ref[i][16 + h * 4 + c]) <= 1e-6);
                }
    }
}

TEST_CASE("attention_matrix") {
    Tape<double> tape;
    auto make = [&](Tensor<double> q, Tensor<double> k) {
        AttentionState<double> s;
        s.config = {q.cols(), 1};
        s.q = {tape.constant(std::move(q))};
        s.k = {tape.constant(std::move(k))};
        s.v = {tape.constant(Tensor<double>({s.q[0].value().rows(), s.config.dim}))};
        attention_matrix(s, s.config.head_dim());
        return s.attn[0].value();
    };
    SUBCASE("a single token attends to itself") {
        CHECK(make(Tensor<double>::matrix(1, 2, {0.3, -4}), Tensor<double>::matrix(1, 2, {7, 1})) ==
              Tensor<double>::matrix(1, 1, {1.0}));
    }
    SUBCASE("identical keys give uniform rows") {
        const auto a = make(Tensor<double>::matrix(2, 2, {1, 2, -3, 0.5}), Tensor<double>::matrix(2, 2, {1, 1, 1, 1}));
        for (auto v : a.data()) CHECK(v == doctest::Approx(0.5));
    }
    SUBCASE("closed form with head_dim 1") {
        const auto a = make(Tensor<double>::matrix(1, 1, {1.0}), Tensor<double>::matrix(2, 1, {0.0, std::log(4.0)}));
        CHECK(a[0] == doctest::Approx(0.2).epsilon(1e-14));
        CHECK(a[1] == doctest::Approx(0.8).epsilon(1e-14));
    }
}

TEST_CASE("attend") {
    Rng rng(2);
    Tape<double> tape;
    const std::size_t t = 4, d = 6;
    AttentionState<double> s;
    s.config = {d, 2};
    const auto v0 = randn(rng, {t, 3}), v1 = randn(rng, {t, 3});
    s.v = {tape.constant(v0), tape.constant(v1)};
    s.q = s.v;
    s.k = s.v;
    const auto proj_w = randn(rng, {d, d}), proj_b = randn(rng, {d});
    Tensor<double> merged({t, d});
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            merged(i, c) = v0(i, c);
            merged(i, 3 + c) = v1(i, c);
        }

    SUBCASE("identity attention projects the concatenated values") {
        s.attn = {tape.constant(identity(t)), tape.constant(identity(t))};
        const auto out = attend(s, tape.constant(proj_w), tape.constant(proj_b)).value();
        const auto ref = oracle::affine(oracle::to_mat(merged), proj_w, proj_b);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(out(i, c) - ref[i][c]) <= 1e-12);
    }
    SUBCASE("uniform attention averages the values") {
        const Tensor<double> uniform({t, t}, 0.25);
        s.attn = {tape.constant(uniform), tape.constant(uniform)};
        const auto out = attend(s, tape.constant(identity(d)), tape.constant(Tensor<double>({d}))).value();
        for (std::size_t c = 0; c < d; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < t; ++i) mean += merged(i, c) / t;
            for (std::size_t i = 0; i < t; ++i) CHECK(std::abs(out(i, c) - mean) <= 1e-12);
        }
    }
}

TEST_CASE("full attention matches the oracle on seeded cases") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const std::size_t heads = std::size_t{1} << rng.uniform_int(3), d = heads * (1 + rng.uniform_int(4));
        const std::size_t t = 1 + rng.uniform_int(12);
        const auto x = randn(rng, {t, d});
        const auto w = Weights::random(rng, d);
        Tape<double> tape;
        const auto got = run(tape, x, w, {d, heads});
        const auto ref = oracle::attention(oracle::to_mat(x), w.qkv_w, w.qkv_b, w.proj_w, w.proj_b, heads);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(got.output(i, c) - ref.output[i][c]) <= 1e-6);
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = 0; j < t; ++j)
                    CHECK(std::abs(got.state.attn[h].value()(i, j) - ref.attn[h][i][j]) <= 1e-9);
    }
}

TEST_CASE("attention rows are stochastic for every head and T in [1, 64]") {
    Rng rng(3);
    const auto w = Weights::random(rng, 8);
    for (std::size_t t = 1; t <= 64; ++t) {
        Tape<double> tape;
        const auto r = run(tape, randn(rng, {t, 8}, 2.0), w, {8, 4});
        for (const auto& a : r.state.attention_values())
            for (std::size_t i = 0; i < t; ++i) {
                const auto row = a.row(i);
                CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) - 1.0) <= 1e-6);
            }
    }
}

TEST_CASE("permuting non-CLS tokens permutes the output") {
    Rng rng(4);
    const std::size_t t = 9, d = 8;
    const auto w = Weights::random(rng, d);
    const auto x = randn(rng, {t, d});
    std::vector<std::size_t> perm(t);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm).subspan(1));
    const auto xp = gather_rows(x, perm);
    Tape<double> tape;
    const auto a = run(tape, x, w, {d, 2}).output;
    const auto b = run(tape, xp, w, {d, 2}).output;
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < d; ++c) CHECK(std::abs(b(i, c) - a(perm[i], c)) <= 1e-6);
    CHECK(perm[0] == 0);
}

TEST_CASE("one head equals the single-head formulation exactly") {
    Rng rng(5);
    const std::size_t t = 5, d = 6;
    const auto x = randn(rng, {t, d});
    const auto w = Weights::random(rng, d);
    Tape<double> tape;
    const auto got = run(tape, x, w, {d, 1}).output;
    const auto qkv = matmul(x, w.qkv_w);
    Tensor<double> q({t, d}), k({t, d}), v({t, d});
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < d; ++c) {
            q(i, c) = qkv(i, c) + w.qkv_b[c];
            k(i, c) = qkv(i, d + c) + w.qkv_b[d + c];
            v(i, c) = qkv(i, 2 * d + c) + w.qkv_b[2 * d + c];
        }
    auto logits = matmul(q, transpose(k));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& e : logits.data()) e *= inv_sqrt_d;
    auto out = matmul(matmul(softmax_rows(logits), v), w.proj_w);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < d; ++c) out(i, c) += w.proj_b[c];
    CHECK(got == out);
}
