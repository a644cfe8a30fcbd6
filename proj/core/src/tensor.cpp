// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "ats/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <type_traits>
#include <cmath>
#include <numbers>
#include <sstream>

namespace ats {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    update_cols();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_string(shape_));
    }
    update_cols();
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
    return Tensor({rows, cols}, std::vector<T>(values));
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
    return Tensor({values.size()}, std::vector<T>(values));
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
    if (t.rank() != 2) {
        throw DimensionError(std::string(what) + ": expected a matrix, got shape " + shape_string(t.shape()));
    }
}

}  // namespace

template <typename T>
void require_finite(const Tensor<T>& x, const char* what) {
    // Exponent-all-ones test on the bit pattern; an OR-reduction vectorizes.
    using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    constexpr Bits exponent = sizeof(T) == 4 ? static_cast<Bits>(0x7f800000u) : static_cast<Bits>(0x7ff0000000000000ull);
    bool bad = false;
    for (T v : x.data()) bad |= (std::bit_cast<Bits>(v) & exponent) == exponent;
    if (bad) throw NumericError(std::string(what) + ": non-finite value (overflow)");
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul: inner extents differ " + shape_string(a.shape()) + " · " +
                             shape_string(b.shape()));
    }
    Tensor<T> out({m, n});
    const T* __restrict pa = a.data().data();
    const T* __restrict pb = b.data().data();
    T* __restrict po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        T* __restrict orow = po + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = pa[i * k + p];
            const T* __restrict brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    require_finite(out, "matmul");
    return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix(a, "matmul_nt");
    require_matrix(b, "matmul_nt");
    if (b.shape()[1] != a.shape()[1]) {
        throw DimensionError("matmul_nt: inner extents differ " + shape_string(a.shape()) + " · " +
                             shape_string(b.shape()) + "ᵀ");
    }
    // Same per-element summation order as the direct dot product.
    return matmul(a, transpose(b));
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    require_matrix(a, "matmul_tn");
    require_matrix(b, "matmul_tn");
    const std::size_t k = a.shape()[0], m = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw DimensionError("matmul_tn: inner extents differ " + shape_string(a.shape()) + "ᵀ · " +
                             shape_string(b.shape()));
    }
    Tensor<T> out({m, n});
    const T* __restrict pa = a.data().data();
    const T* __restrict pb = b.data().data();
    T* __restrict po = out.data().data();
    // Outer loop over k keeps the per-element sum sequential in k.
    for (std::size_t p = 0; p < k; ++p) {
        const T* __restrict brow = pb + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T av = pa[p * m + i];
            if (av == T{0}) continue;
            T* __restrict orow = po + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    require_finite(out, "matmul_tn");
    return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    require_matrix(a, "transpose");
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    Tensor<T> out({n, m});
    const T* __restrict src = a.data().data();
    T* __restrict dst = out.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    require_matrix(x, "softmax_rows");
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        const T mx = *std::max_element(in.begin(), in.end());
        T total{0};
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        for (auto& v : o) v /= total;
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
    require_matrix(x, "layer_norm");
    const std::size_t d = x.cols();
    if (d == 0) throw ContractError("layer_norm: feature width must be at least 1");
    if (gamma.size() != d || beta.size() != d) {
        throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
    }
    Tensor<T> out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto in = x.row(r);
        auto o = out.row(r);
        T mean{0};
        for (T v : in) mean += v;
        mean /= static_cast<T>(d);
        T var{0};
        for (T v : in) var += (v - mean) * (v - mean);
        var /= static_cast<T>(d);
        const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
        for (std::size_t j = 0; j < d; ++j) o[j] = gamma[j] * ((in[j] - mean) * inv) + beta[j];
    }
    return out;
}

double gelu_scalar(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = T{0.5} * x[i] * std::erfc(-x[i] * inv_sqrt2);
    return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
    require_matrix(x, "gather_rows");
    const std::size_t n = x.cols();
    Tensor<T> out({rows.size(), n});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.rows()) {
            throw DimensionError("gather_rows: index " + std::to_string(rows[i]) + " out of range for " +
                                 std::to_string(x.rows()) + " rows");
        }
        std::copy_n(x.row(rows[i]).begin(), n, out.row(i).begin());
    }
    return out;
}

#define ATS_INSTANTIATE_TENSOR(T)                                                                       \
    template class Tensor<T>;                                                                           \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                                   \
    template Tensor<T> transpose(const Tensor<T>&);                                                     \
    template Tensor<T> softmax_rows(const Tensor<T>&);                                                  \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);        \
    template Tensor<T> gelu(const Tensor<T>&);                                                          \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                     \
    template void require_finite(const Tensor<T>&, const char*);

ATS_INSTANTIATE_TENSOR(float)
ATS_INSTANTIATE_TENSOR(double)

}  // namespace ats
