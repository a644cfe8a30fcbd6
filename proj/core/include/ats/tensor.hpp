// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ats/error.hpp"

namespace ats {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor. `double` is the checking precision, `float` the
/// throughput precision; both are instantiated.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0});
    Tensor(Shape shape, std::vector<T> data);

    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values);
    static Tensor vector(std::initializer_list<T> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Leading extent; 2-D views treat everything after it as columns.
    std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const noexcept { return cols_; }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    T operator[](std::size_t i) const noexcept { return data_[i]; }
    T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols(), cols()}; }

    void fill(T value);
    Tensor reshaped(Shape shape) const;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void update_cols() noexcept { cols_ = rows() == 0 ? 0 : data_.size() / rows(); }

    Shape shape_;
    std::vector<T> data_;
    std::size_t cols_ = 0;
};

// Dense kernels. Reductions run sequentially in index order so results are
// bit-reproducible; callers may parallelize across independent rows only.

/// a[m×k] · b[k×n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// a[m×k] · b[n×k]ᵀ
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

/// a[k×m]ᵀ · b[k×n]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// Per-row normalization to zero mean, unit variance, then gamma * x̂ + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);

/// x·Φ(x) with the exact Gaussian CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

/// Throws NumericError if any element is NaN or infinite.
template <typename T>
void require_finite(const Tensor<T>& x, const char* what);

double gelu_scalar(double x);
double gelu_derivative(double x);

}  // namespace ats
