// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0
//
// Straight-loop reference implementations used as test oracles. Nothing here
// calls into the library's kernels, tape or sampler.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ats/model.hpp"

namespace ats::oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor<double>& t) {
    Mat m(t.rows(), std::vector<double>(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.data()[r * t.cols() + c];
    return m;
}

inline Mat vec_to_row(const Tensor<double>& t) { return {std::vector<double>(t.data().begin(), t.data().end())}; }

inline Mat mat_mul(const Mat& a, const Mat& b) {
    Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b[0].size(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < b.size(); ++k) acc += a[i][k] * b[k][j];
            out[i][j] = acc;
        }
    return out;
}

inline Mat add_bias(Mat x, const std::vector<double>& b) {
    for (auto& row : x)
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    return x;
}

inline Mat affine(const Mat& x, const Tensor<double>& w, const Tensor<double>& b) {
    return add_bias(mat_mul(x, to_mat(w)), std::vector<double>(b.data().begin(), b.data().end()));
}

inline Mat layer_norm(const Mat& x, const Tensor<double>& g, const Tensor<double>& b, double eps) {
    Mat out = x;
    for (std::size_t r = 0; r < x.size(); ++r) {
        const double n = static_cast<double>(x[r].size());
        double mean = 0.0;
        for (double v : x[r]) mean += v / n;
        double var = 0.0;
        for (double v : x[r]) var += (v - mean) * (v - mean) / n;
        for (std::size_t j = 0; j < x[r].size(); ++j)
            out[r][j] = (x[r][j] - mean) / std::sqrt(var + eps) * g.data()[j] + b.data()[j];
    }
    return out;
}

inline std::vector<double> softmax(std::vector<double> row) {
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        total += v;
    }
    for (double& v : row) v /= total;
    return row;
}

struct AttentionOut {
    Mat output;                  // after output projection
    std::vector<Mat> attn;       // per head
    std::vector<Mat> values;     // per head
};

/// Multi-head self-attention written from scratch. Head h uses columns
/// [h·hd, (h+1)·hd) of each Q/K/V block of the fused projection.
inline AttentionOut attention(const Mat& x, const Tensor<double>& qkv_w, const Tensor<double>& qkv_b,
                              const Tensor<double>& proj_w, const Tensor<double>& proj_b, std::size_t heads,
                              const std::vector<std::size_t>* keep_rows = nullptr) {
    const std::size_t t = x.size();
    const std::size_t d = x[0].size();
    const std::size_t hd = d / heads;
    const Mat qkv = affine(x, qkv_w, qkv_b);
    std::vector<std::size_t> rows;
    if (keep_rows) rows = *keep_rows;
    else
        for (std::size_t i = 0; i < t; ++i) rows.push_back(i);
    AttentionOut out;
    Mat merged(rows.size(), std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
        Mat a(t, std::vector<double>(t));
        Mat v(t, std::vector<double>(hd));
        for (std::size_t i = 0; i < t; ++i) {
            std::vector<double> logits(t);
            for (std::size_t j = 0; j < t; ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < hd; ++c) dot += qkv[i][h * hd + c] * qkv[j][d + h * hd + c];
                logits[j] = dot / std::sqrt(static_cast<double>(hd));
            }
            a[i] = softmax(logits);
            for (std::size_t c = 0; c < hd; ++c) v[i][c] = qkv[i][2 * d + h * hd + c];
        }
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < hd; ++c) {
                double acc = 0.0;
                for (std::size_t j = 0; j < t; ++j) acc += a[rows[r]][j] * v[j][c];
                merged[r][h * hd + c] = acc;
            }
        out.attn.push_back(std::move(a));
        out.values.push_back(std::move(v));
    }
    out.output = affine(merged, proj_w, proj_b);
    return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

/// Patch projection, CLS row and positional embedding.
inline Mat vit_embed(const Model<double>& model, const Tensor<double>& image) {
    const ArchConfig& a = model.arch();
    auto P = [&](const std::string& n) -> const Tensor<double>& { return model.at(n).value; };
    const std::size_t g = a.image_size / a.patch_size;
    Mat patches;
    for (std::size_t gy = 0; gy < g; ++gy)
        for (std::size_t gx = 0; gx < g; ++gx) {
            std::vector<double> row;
            for (std::size_t dy = 0; dy < a.patch_size; ++dy)
                for (std::size_t dx = 0; dx < a.patch_size; ++dx)
                    for (std::size_t c = 0; c < a.channels; ++c)
                        row.push_back(image.data()[((gy * a.patch_size + dy) * a.image_size + gx * a.patch_size + dx) *
                                                       a.channels +
                                                   c]);
            patches.push_back(row);
        }
    Mat x = affine(patches, P("patch_embed.weight"), P("patch_embed.bias"));
    x.insert(x.begin(), to_mat(P("cls_token"))[0]);
    const Mat pos = to_mat(P("pos_embed"));
    for (std::size_t r = 0; r < x.size(); ++r)
        for (std::size_t c = 0; c < x[r].size(); ++c) x[r][c] += pos[r][c];
    return x;
}

/// One pre-norm block without sampling. `attn_out`, when given, receives the
/// attention intermediates of the block.
inline Mat vit_block(const Model<double>& model, std::size_t b, Mat x, AttentionOut* attn_out = nullptr) {
    const ArchConfig& a = model.arch();
    auto P = [&](const std::string& n) -> const Tensor<double>& { return model.at(n).value; };
    const std::string p = "blocks." + std::to_string(b) + ".";
    const Mat h = layer_norm(x, P(p + "norm1.weight"), P(p + "norm1.bias"), a.ln_eps);
    AttentionOut att = attention(h, P(p + "attn.qkv.weight"), P(p + "attn.qkv.bias"), P(p + "attn.proj.weight"),
                                 P(p + "attn.proj.bias"), a.heads);
    for (std::size_t r = 0; r < x.size(); ++r)
        for (std::size_t c = 0; c < x[r].size(); ++c) x[r][c] += att.output[r][c];
    Mat h2 = affine(layer_norm(x, P(p + "norm2.weight"), P(p + "norm2.bias"), a.ln_eps), P(p + "mlp.fc1.weight"),
                    P(p + "mlp.fc1.bias"));
    for (auto& row : h2)
        for (double& v : row) v = gelu(v);
    const Mat m = affine(h2, P(p + "mlp.fc2.weight"), P(p + "mlp.fc2.bias"));
    for (std::size_t r = 0; r < x.size(); ++r)
        for (std::size_t c = 0; c < x[r].size(); ++c) x[r][c] += m[r][c];
    if (attn_out) *attn_out = std::move(att);
    return x;
}

/// Plain ViT logits (no sampling), looked up by parameter name.
inline std::vector<double> vit_logits(const Model<double>& model, const Tensor<double>& image) {
    const ArchConfig& a = model.arch();
    auto P = [&](const std::string& n) -> const Tensor<double>& { return model.at(n).value; };
    Mat x = vit_embed(model, image);
    for (std::size_t b = 0; b < a.depth; ++b) x = vit_block(model, b, std::move(x));
    const Mat cls = layer_norm({x[0]}, P("norm.weight"), P("norm.bias"), a.ln_eps);
    return affine(cls, P("head.weight"), P("head.bias"))[0];
}

/// Significance scores by plain loops: per head A[0][j]·‖V_j‖₂ for j ≥ 1, summed over
/// heads, divided by the total.
inline std::vector<double> cls_vnorm_scores(const AttentionOut& att) {
    const std::size_t n = att.attn[0].size() - 1;
    std::vector<double> s(n, 0.0);
    for (std::size_t h = 0; h < att.attn.size(); ++h)
        for (std::size_t j = 1; j <= n; ++j) {
            double sq = 0.0;
            for (double v : att.values[h][j]) sq += v * v;
            s[j - 1] += att.attn[h][0][j] * std::sqrt(sq);
        }
    double total = 0.0;
    for (double v : s) total += v;
    for (double& v : s) v /= total;
    return s;
}

/// Generalized-inverse sampling by brute force: for every grid point j/K,
/// scan the prefix sums from the left for the first entry ≥ j/K.
inline std::vector<std::size_t> cdf_scan_kept(const std::vector<double>& normalized_scores, std::size_t budget) {
    const std::size_t n = normalized_scores.size();
    std::vector<double> cdf(n);
    double running = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        running += normalized_scores[i];
        cdf[i] = running > 1.0 ? 1.0 : running;
    }
    cdf[n - 1] = 1.0;
    std::vector<bool> hit(n + 1, false);
    hit[0] = true;
    for (std::size_t j = 1; j <= budget; ++j) {
        const double k = j == budget ? 1.0 : static_cast<double>(j) / static_cast<double>(budget);
        for (std::size_t i = 0; i < n; ++i) {
            if (cdf[i] >= k) {
                hit[i + 1] = true;
                break;
            }
        }
    }
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i <= n; ++i)
        if (hit[i]) kept.push_back(i);
    return kept;
}

}  // namespace ats::oracle
