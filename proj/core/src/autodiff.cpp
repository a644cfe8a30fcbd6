// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "ats/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ats {

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape_->value(id_);
}

template <typename T>
const Tensor<T>& Var<T>::grad() const {
    return tape_->grad(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
    return tape_->requires_grad(id_);
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = recording_;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    if (recording_) {
        n.requires_grad = true;
        n.sink = &p.grad;
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(const Parameter<T>& p) {
    Node n;
    n.external = &p.value;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(const Tensor<T>& value, Tensor<T>& grad_sink) {
    Node n;
    n.external = &value;
    if (recording_) {
        n.requires_grad = true;
        n.sink = &grad_sink;
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, std::initializer_list<std::size_t> parents, BackwardFn fn) {
    return push(std::move(value), std::span<const std::size_t>(parents.begin(), parents.size()), std::move(fn));
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, std::span<const std::size_t> parents, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    if (recording_) {
        n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                      [this](std::size_t p) { return nodes_[p].requires_grad; });
        if (n.requires_grad) n.backward = std::move(fn);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape());
    return n.grad;
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, const Tensor<T>& contribution) {
    if (!nodes_[id].requires_grad) return;
    Tensor<T>& g = grad_buffer(id);
    if (g.size() != contribution.size()) {
        throw DimensionError("gradient shape " + shape_string(contribution.shape()) + " does not match node shape " +
                             shape_string(g.shape()));
    }
    auto gd = g.data();
    auto cd = contribution.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += cd[i];
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
    if (loss.value().size() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " + shape_string(loss.value().shape()));
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id()).fill(T{1});
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(*this, i);
        if (n.sink) {
            if (n.sink->shape() != n.grad.shape()) *n.sink = Tensor<T>(n.grad.shape());
            auto s = n.sink->data();
            auto g = n.grad.data();
            for (std::size_t k = 0; k < s.size(); ++k) s[k] += g[k];
        }
    }
}

namespace {

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b) {
    if (&a.tape() != &b.tape()) throw ContractError("operands live on different tapes");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    require_same_tape(a, b);
    auto& tape = a.tape();
    const std::size_t ia = a.id(), ib = b.id();
    return tape.push(matmul(a.value(), b.value()), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        if (t.requires_grad(ia)) t.accumulate(ia, matmul_nt(g, t.value(ib)));
        if (t.requires_grad(ib)) t.accumulate(ib, matmul_tn(t.value(ia), g));
    });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
    require_same_tape(a, b);
    auto& tape = a.tape();
    const std::size_t ia = a.id(), ib = b.id();
    return tape.push(matmul_nt(a.value(), b.value()), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        if (t.requires_grad(ia)) t.accumulate(ia, matmul(g, t.value(ib)));
        if (t.requires_grad(ib)) t.accumulate(ib, matmul_tn(g, t.value(ia)));
    });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
    require_same_tape(x, weight);
    require_same_tape(x, bias);
    const Tensor<T>& bv = bias.value();
    Tensor<T> out = matmul(x.value(), weight.value());
    if (bv.size() != out.cols()) {
        throw DimensionError("linear: bias has " + std::to_string(bv.size()) + " entries, expected " +
                             std::to_string(out.cols()));
    }
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += bv[j];
    }
    const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
    return x.tape().push(std::move(out), {ix, iw, ib}, [ix, iw, ib](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        if (t.requires_grad(ix)) t.accumulate(ix, matmul_nt(g, t.value(iw)));
        if (t.requires_grad(iw)) t.accumulate(iw, matmul_tn(t.value(ix), g));
        if (t.requires_grad(ib)) {
            Tensor<T>& gb = t.grad_buffer(ib);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                auto row = g.row(r);
                for (std::size_t j = 0; j < row.size(); ++j) gb[j] += row[j];
            }
        }
    });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_tape(a, b);
    require_same_shape(a.value(), b.value(), "add");
    Tensor<T> out = a.value();
    auto bd = b.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
        t.accumulate(ia, t.grad(self));
        t.accumulate(ib, t.grad(self));
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_tape(a, b);
    require_same_shape(a.value(), b.value(), "mul");
    Tensor<T> out = a.value();
    auto bd = b.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().push(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        if (t.requires_grad(ia)) {
            Tensor<T>& ga = t.grad_buffer(ia);
            const Tensor<T>& bv = t.value(ib);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
            Tensor<T>& gb = t.grad_buffer(ib);
            const Tensor<T>& av = t.value(ia);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, double factor) {
    Tensor<T> out = a.value();
    const T f = static_cast<T>(factor);
    for (auto& v : out.data()) v *= f;
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), {ia}, [ia, f](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * f;
    });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t width) {
    const Tensor<T>& av = a.value();
    if (av.rank() != 2 || start + width > av.cols()) {
        throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + width) +
                             ") out of range for " + shape_string(av.shape()));
    }
    Tensor<T> out({av.rows(), width});
    for (std::size_t r = 0; r < av.rows(); ++r) std::copy_n(av.row(r).begin() + start, width, out.row(r).begin());
    const std::size_t ia = a.id();
    return a.tape().push(std::move(out), {ia}, [ia, start, width](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& ga = t.grad_buffer(ia);
        for (std::size_t r = 0; r < g.rows(); ++r) {
            auto src = g.row(r);
            auto dst = ga.row(r);
            for (std::size_t j = 0; j < width; ++j) dst[start + j] += src[j];
        }
    });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
    if (parts.empty()) throw ContractError("concat_cols: no operands");
    const std::size_t rows = parts[0].value().rows();
    std::size_t total = 0;
    std::vector<std::size_t> ids, widths;
    for (const auto& p : parts) {
        require_same_tape(parts[0], p);
        if (p.value().rank() != 2 || p.value().rows() != rows) {
            throw DimensionError("concat_cols: row counts differ");
        }
        ids.push_back(p.id());
        widths.push_back(p.value().cols());
        total += p.value().cols();
    }
    Tensor<T> out({rows, total});
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            auto src = p.value().row(r);
            std::copy(src.begin(), src.end(), out.row(r).begin() + offset);
            offset += src.size();
        }
    }
    return parts[0].tape().push(std::move(out), ids, [ids, widths](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (t.requires_grad(ids[k])) {
                Tensor<T>& gp = t.grad_buffer(ids[k]);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    auto src = g.row(r);
                    auto dst = gp.row(r);
                    for (std::size_t j = 0; j < widths[k]; ++j) dst[j] += src[offset + j];
                }
            }
            offset += widths[k];
        }
    });
}

template <typename T>
Var<T> concat_rows(Var<T> top, Var<T> bottom) {
    require_same_tape(top, bottom);
    const Tensor<T>& a = top.value();
    const Tensor<T>& b = bottom.value();
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw DimensionError("concat_rows: column counts differ " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    std::vector<T> data(a.storage());
    data.insert(data.end(), b.storage().begin(), b.storage().end());
    const std::size_t split = a.size();
    const std::size_t ia = top.id(), ib = bottom.id();
    return top.tape().push(Tensor<T>({a.rows() + b.rows(), a.cols()}, std::move(data)), {ia, ib},
                           [ia, ib, split](Tape<T>& t, std::size_t self) {
                               const Tensor<T>& g = t.grad(self);
                               if (t.requires_grad(ia)) {
                                   Tensor<T>& ga = t.grad_buffer(ia);
                                   for (std::size_t i = 0; i < split; ++i) ga[i] += g[i];
                               }
                               if (t.requires_grad(ib)) {
                                   Tensor<T>& gb = t.grad_buffer(ib);
                                   for (std::size_t i = split; i < g.size(); ++i) gb[i - split] += g[i];
                               }
                           });
}

template <typename T>
Var<T> gather_rows(Var<T> a, std::span<const std::size_t> rows) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    const std::size_t ia = a.id();
    return a.tape().push(gather_rows(a.value(), rows), {ia}, [ia, idx](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        Tensor<T>& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto src = g.row(i);
            auto dst = ga.row(idx[i]);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
    });
}

template <typename T>
Var<T> softmax_rows(Var<T> a) {
    const std::size_t ia = a.id();
    return a.tape().push(softmax_rows(a.value()), {ia}, [ia](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& y = t.value(self);
        Tensor<T>& ga = t.grad_buffer(ia);
        for (std::size_t r = 0; r < y.rows(); ++r) {
            auto yr = y.row(r);
            auto gr = g.row(r);
            auto dr = ga.row(r);
            T dot{0};
            for (std::size_t j = 0; j < yr.size(); ++j) dot += gr[j] * yr[j];
            for (std::size_t j = 0; j < yr.size(); ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
    });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps) {
    require_same_tape(x, gamma);
    require_same_tape(x, beta);
    const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.tape().push(
        layer_norm(x.value(), gamma.value(), beta.value(), eps), {ix, ig, ib},
        [ix, ig, ib, eps](Tape<T>& t, std::size_t self) {
            const Tensor<T>& g = t.grad(self);
            const Tensor<T>& xv = t.value(ix);
            const Tensor<T>& gv = t.value(ig);
            const std::size_t d = xv.cols();
            std::vector<T> xhat(d), dxhat(d);
            for (std::size_t r = 0; r < xv.rows(); ++r) {
                auto in = xv.row(r);
                auto gr = g.row(r);
                T mean{0};
                for (T v : in) mean += v;
                mean /= static_cast<T>(d);
                T var{0};
                for (T v : in) var += (v - mean) * (v - mean);
                var /= static_cast<T>(d);
                const T inv = T{1} / std::sqrt(var + static_cast<T>(eps));
                T sum_dxhat{0}, sum_dxhat_xhat{0};
                for (std::size_t j = 0; j < d; ++j) {
                    xhat[j] = (in[j] - mean) * inv;
                    dxhat[j] = gr[j] * gv[j];
                    sum_dxhat += dxhat[j];
                    sum_dxhat_xhat += dxhat[j] * xhat[j];
                }
                if (t.requires_grad(ix)) {
                    auto dx = t.grad_buffer(ix).row(r);
                    const T n = static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        dx[j] += inv / n * (n * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                    }
                }
                if (t.requires_grad(ig)) {
                    Tensor<T>& dg = t.grad_buffer(ig);
                    for (std::size_t j = 0; j < d; ++j) dg[j] += gr[j] * xhat[j];
                }
                if (t.requires_grad(ib)) {
                    Tensor<T>& db = t.grad_buffer(ib);
                    for (std::size_t j = 0; j < d; ++j) db[j] += gr[j];
                }
            }
        });
}

template <typename T>
Var<T> gelu(Var<T> x) {
    const std::size_t ix = x.id();
    return x.tape().push(gelu(x.value()), {ix}, [ix](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xv = t.value(ix);
        const Tensor<T>& yv = t.value(self);
        Tensor<T>& gx = t.grad_buffer(ix);
        const T inv_sqrt_2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
        for (std::size_t i = 0; i < g.size(); ++i) {
            // Φ(x) = gelu(x)/x away from 0; recompute near 0 where the ratio is unstable.
            const T xi = xv[i];
            const T cdf = std::abs(xi) > T{1e-3} ? yv[i] / xi
                                                 : T{0.5} * std::erfc(-xi * static_cast<T>(1.0 / std::numbers::sqrt2));
            gx[i] += g[i] * (cdf + xi * inv_sqrt_2pi * std::exp(T{-0.5} * xi * xi));
        }
    });
}

template <typename T>
Var<T> sum(Var<T> a) {
    T total{0};
    for (T v : a.value().data()) total += v;
    const std::size_t ia = a.id();
    return a.tape().push(Tensor<T>({1}, std::vector<T>{total}), {ia}, [ia](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        Tensor<T>& ga = t.grad_buffer(ia);
        for (auto& v : ga.data()) v += g;
    });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::size_t label) {
    const Tensor<T>& z = logits.value();
    if (label >= z.size()) throw ContractError("cross_entropy: label out of range");
    const T mx = *std::max_element(z.data().begin(), z.data().end());
    T total{0};
    for (T v : z.data()) total += std::exp(v - mx);
    const T loss = std::log(total) + mx - z[label];
    const std::size_t il = logits.id();
    return logits.tape().push(Tensor<T>({1}, std::vector<T>{loss}), {il},
                              [il, label, mx, total](Tape<T>& t, std::size_t self) {
                                  const T g = t.grad(self)[0];
                                  const Tensor<T>& zv = t.value(il);
                                  Tensor<T>& gz = t.grad_buffer(il);
                                  for (std::size_t i = 0; i < zv.size(); ++i) {
                                      const T p = std::exp(zv[i] - mx) / total;
                                      gz[i] += g * (p - (i == label ? T{1} : T{0}));
                                  }
                              });
}

double grad_check(const std::function<Var<double>(Tape<double>&, Var<double>)>& f, const Tensor<double>& x,
                  double h) {
    Tape<double> tape;
    Var<double> xv = tape.leaf(x);
    Var<double> loss = f(tape, xv);
    tape.backward(loss);
    Tensor<double> analytic = xv.grad().empty() ? Tensor<double>(x.shape()) : xv.grad();

    auto eval = [&](const Tensor<double>& point) {
        Tape<double> t(false);
        return f(t, t.constant(point)).value()[0];
    };
    double worst = 0.0;
    Tensor<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = eval(probe);
        probe[i] = x[i] - h;
        const double down = eval(probe);
        probe[i] = x[i];
        const double numeric = (up - down) / (2.0 * h);
        worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8));
    }
    return worst;
}

#define ATS_INSTANTIATE_AUTODIFF(T)                                                 \
    template class Var<T>;                                                          \
    template class Tape<T>;                                                         \
    template Var<T> matmul(Var<T>, Var<T>);                                         \
    template Var<T> matmul_nt(Var<T>, Var<T>);                                      \
    template Var<T> linear(Var<T>, Var<T>, Var<T>);                                 \
    template Var<T> add(Var<T>, Var<T>);                                            \
    template Var<T> mul(Var<T>, Var<T>);                                            \
    template Var<T> scale(Var<T>, double);                                          \
    template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                   \
    template Var<T> concat_cols(std::span<const Var<T>>);                           \
    template Var<T> concat_rows(Var<T>, Var<T>);                                    \
    template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);              \
    template Var<T> softmax_rows(Var<T>);                                           \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, double);                     \
    template Var<T> gelu(Var<T>);                                                   \
    template Var<T> sum(Var<T>);                                                    \
    template Var<T> cross_entropy(Var<T>, std::size_t);

ATS_INSTANTIATE_AUTODIFF(float)
ATS_INSTANTIATE_AUTODIFF(double)

}  // namespace ats
