// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ats/tensor.hpp"

namespace ats {

template <typename T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) noexcept : tape_(tape), id_(id) {}

    const Tensor<T>& value() const;
    /// Accumulated gradient; empty tensor if none reached this node.
    const Tensor<T>& grad() const;
    bool requires_grad() const;

    Tape<T>& tape() const noexcept { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    const Shape& shape() const { return value().shape(); }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Trainable tensor living outside any tape. `grad` is accumulated into with
/// += by Tape::backward and must be zeroed explicitly between steps.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool decay = false;

    void zero_grad() {
        if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
        else grad.fill(T{0});
    }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward() is a single reverse sweep.
template <typename T>
class Tape {
public:
    /// Receives the tape and the id of the node whose gradient is complete.
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    /// A non-recording tape evaluates values only (inference).
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const noexcept { return recording_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var<T> constant(Tensor<T> value);
    Var<T> leaf(Tensor<T> value);
    /// References p.value without copying; gradients flow into p.grad.
    Var<T> param(Parameter<T>& p);
    /// Read-only parameter reference (no gradient).
    Var<T> param(const Parameter<T>& p);
    /// References `value`; gradients are added into `grad_sink` on backward.
    Var<T> param(const Tensor<T>& value, Tensor<T>& grad_sink);

    /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once. Throws
    /// ContractError unless loss holds exactly one element.
    void backward(Var<T> loss);

    const Tensor<T>& value(std::size_t id) const;
    const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Adds `contribution` into the gradient of node `id` (lazily allocated).
    void accumulate(std::size_t id, const Tensor<T>& contribution);
    /// Mutable gradient buffer for in-place accumulation (lazily allocated).
    Tensor<T>& grad_buffer(std::size_t id);

    /// Appends an op result. `fn` is dropped when no parent requires grad
    /// or the tape is not recording.
    Var<T> push(Tensor<T> value, std::initializer_list<std::size_t> parents, BackwardFn fn);
    Var<T> push(Tensor<T> value, std::span<const std::size_t> parents, BackwardFn fn);

private:
    struct Node {
        Tensor<T> owned;
        const Tensor<T>* external = nullptr;
        Tensor<T> grad;
        Tensor<T>* sink = nullptr;
        bool requires_grad = false;
        BackwardFn backward;
    };

    bool recording_;
    std::vector<Node> nodes_;
};

// Differentiable operations. All operands must live on the same tape.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> matmul_nt(Var<T> a, Var<T> b);
/// x·W + b with b broadcast over rows.
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, double factor);
template <typename T> Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t width);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T> Var<T> concat_rows(Var<T> top, Var<T> bottom);
template <typename T> Var<T> gather_rows(Var<T> a, std::span<const std::size_t> rows);
template <typename T> Var<T> softmax_rows(Var<T> a);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5);
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> sum(Var<T> a);
/// Softmax cross-entropy of a single logit row against `label`.
template <typename T> Var<T> cross_entropy(Var<T> logits, std::size_t label);

/// Maximum over coordinates of |analytic - central difference| / (|analytic| + 1e-8)
/// for a scalar-valued f. Intended for double precision.
double grad_check(const std::function<Var<double>(Tape<double>&, Var<double>)>& f, const Tensor<double>& x,
                  double h = 1e-5);

}  // namespace ats
