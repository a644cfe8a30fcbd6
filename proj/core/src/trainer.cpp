// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "ats/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ats/parallel.hpp"

namespace ats {

double Schedule::lr_at(std::size_t step) const {
    if (warmup_steps > total_steps) throw ContractError("schedule: warmup_steps exceeds total_steps");
    if (step > total_steps) {
        throw ContractError("schedule: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                            "]");
    }
    if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (total_steps == warmup_steps) return base_lr;
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void optim_step(OptimState<T>& state, std::vector<Parameter<T>>& params, double lr) {
    for (const auto& p : params) {
        if (p.grad.shape() != p.value.shape()) {
            throw DimensionError("optim_step: gradient of '" + p.name + "' has shape " + shape_string(p.grad.shape()));
        }
        for (T g : p.grad.data()) {
            if (!std::isfinite(g)) throw NumericError("optim_step: non-finite gradient in parameter '" + p.name + "'");
        }
    }
    if (state.m.size() != params.size()) {
        state.m.clear();
        state.v.clear();
        for (const auto& p : params) {
            state.m.emplace_back(p.value.shape());
            state.v.emplace_back(p.value.shape());
        }
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        auto value = p.value.data();
        auto grad = p.grad.data();
        auto m = state.m[i].data();
        auto v = state.v[i].data();
        const T shrink = static_cast<T>(1.0 - lr * (p.decay ? state.weight_decay : 0.0));
        for (std::size_t k = 0; k < value.size(); ++k) {
            const T g = grad[k];
            m[k] = b1 * m[k] + (T{1} - b1) * g;
            v[k] = b2 * v[k] + (T{1} - b2) * g * g;
            const double m_hat = static_cast<double>(m[k]) / c1;
            const double v_hat = static_cast<double>(v[k]) / c2;
            value[k] = value[k] * shrink - static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + state.eps));
        }
    }
}

std::string metrics_csv_header(const std::vector<std::size_t>& ats_stages) {
    std::string h = "schema,epoch,split,loss,top1";
    for (auto s : ats_stages) h += ",mean_kprime_b" + std::to_string(s);
    h += ",mean_macs";
    return h;
}

namespace {

std::string fmt(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

}  // namespace

void write_metrics_csv(std::ostream& os, const TrainLog& log) {
    os << metrics_csv_header(log.ats_stages) << '\n';
    for (const auto& r : log.rows) {
        os << 1 << ',' << r.epoch << ',' << r.split << ',' << fmt(r.loss) << ',' << fmt(r.top1);
        for (double k : r.mean_kprime) os << ',' << fmt(k, 4);
        os << ',' << fmt(r.mean_macs, 1) << '\n';
    }
}

TrainLog read_metrics_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("metrics CSV: empty");
    const auto header = split_csv(line);
    if (header.size() < 6 || header[0] != "schema" || header.back() != "mean_macs") {
        throw FormatError("metrics CSV: unexpected header");
    }
    TrainLog log;
    for (std::size_t i = 5; i + 1 < header.size(); ++i) {
        const std::string prefix = "mean_kprime_b";
        if (header[i].rfind(prefix, 0) != 0) throw FormatError("metrics CSV: unexpected column " + header[i]);
        log.ats_stages.push_back(std::stoul(header[i].substr(prefix.size())));
    }
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) throw FormatError("metrics CSV: ragged row");
        if (cells[0] != "1") throw FormatError("metrics CSV: unsupported schema " + cells[0]);
        EpochMetrics r;
        r.epoch = std::stoul(cells[1]);
        r.split = cells[2];
        r.loss = std::stod(cells[3]);
        r.top1 = std::stod(cells[4]);
        for (std::size_t i = 5; i + 1 < cells.size(); ++i) r.mean_kprime.push_back(std::stod(cells[i]));
        r.mean_macs = std::stod(cells.back());
        log.rows.push_back(std::move(r));
    }
    return log;
}

namespace {

template <typename T>
std::vector<Tensor<T>> images_as(const std::vector<ShapeSample>& samples) {
    std::vector<Tensor<T>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.image.template cast<T>());
    return out;
}

std::vector<std::size_t> kprimes(const ForwardTrace& trace) {
    std::vector<std::size_t> out;
    for (const auto& s : trace.stages)
        if (s.sample) out.push_back(s.sample->k_prime);
    return out;
}

double cross_entropy_value(const std::vector<double>& logits, std::size_t label) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double z : logits) total += std::exp(z - mx);
    return std::log(total) + mx - logits[label];
}

void summarize(const std::vector<ImageResult>& images, double& loss, double& top1, double& mean_macs,
               std::vector<double>& mean_kprime) {
    loss = top1 = mean_macs = 0.0;
    mean_kprime.clear();
    if (images.empty()) return;
    mean_kprime.assign(images.front().kprime.size(), 0.0);
    for (const auto& r : images) {
        loss += r.loss;
        top1 += r.predicted == r.label ? 1.0 : 0.0;
        mean_macs += static_cast<double>(r.macs);
        for (std::size_t s = 0; s < r.kprime.size(); ++s) mean_kprime[s] += static_cast<double>(r.kprime[s]);
    }
    const double n = static_cast<double>(images.size());
    loss /= n;
    top1 /= n;
    mean_macs /= n;
    for (auto& k : mean_kprime) k /= n;
}

constexpr std::size_t kChunk = 8;

}  // namespace

template <typename T>
EvalResult evaluate(const Model<T>& model, const std::vector<ShapeSample>& samples, const AtsConfig& ats,
                    std::size_t threads, std::uint64_t seed_base) {
    ats.validate(model.arch());
    EvalResult result;
    result.images.resize(samples.size());
    parallel_for(
        samples.size(),
        [&](std::size_t i) {
            const Tensor<T> image = samples[i].image.template cast<T>();
            ImageResult& r = result.images[i];
            r.trace = forward(model, image, ats, mix64(seed_base + i));
            r.label = samples[i].label;
            r.clutter = samples[i].clutter;
            r.predicted = r.trace.predicted;
            r.loss = cross_entropy_value(r.trace.logits, r.label);
            r.kprime = kprimes(r.trace);
            r.macs = model_macs(r.trace, model.arch()).total_macs;
        },
        threads == 0 ? worker_count() : threads);
    summarize(result.images, result.loss, result.top1, result.mean_macs, result.mean_kprime);
    return result;
}

template <typename T>
TrainLog train(Model<T>& model, const Dataset& data, const TrainConfig& config) {
    const ArchConfig& arch = model.arch();
    config.ats.validate(arch);
    if (data.train.empty()) throw ContractError("train: empty training split");
    if (config.batch_size == 0 || config.epochs == 0) throw ContractError("train: batch_size and epochs must be positive");
    const std::size_t threads = config.threads == 0 ? worker_count() : config.threads;

    const std::vector<Tensor<T>> images = images_as<T>(data.train);
    const std::size_t n = images.size();
    const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = config.epochs * steps_per_epoch;
    Schedule schedule{config.base_lr, total_steps + 1,
                      std::min(config.warmup_epochs * steps_per_epoch, total_steps)};
    OptimState<T> opt;
    opt.weight_decay = config.weight_decay;

    auto& params = model.parameters();
    const std::size_t max_chunks = (config.batch_size + kChunk - 1) / kChunk;
    std::vector<std::vector<Tensor<T>>> chunk_grads(max_chunks);
    for (auto& g : chunk_grads)
        for (const auto& p : params) g.emplace_back(p.value.shape());

    TrainLog log;
    log.ats_stages = config.ats.stages;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng(config.seed).derive(epoch).shuffle(order);
        std::vector<ImageResult> seen(n);
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            const std::size_t begin = b * config.batch_size;
            const std::size_t end = std::min(n, begin + config.batch_size);
            const std::size_t batch = end - begin;
            const std::size_t chunks = (batch + kChunk - 1) / kChunk;
            parallel_for(
                chunks,
                [&](std::size_t c) {
                    for (auto& g : chunk_grads[c]) g.fill(T{0});
                    for (std::size_t j = begin + c * kChunk; j < std::min(end, begin + (c + 1) * kChunk); ++j) {
                        const std::size_t idx = order[j];
                        Tape<T> tape;
                        BoundModel<T> bound = bind_model(tape, model, std::span<Tensor<T>>(chunk_grads[c]));
                        const std::uint64_t sample_seed = mix64(config.seed ^ (epoch << 32) ^ idx);
                        ForwardOutput<T> out = forward(bound, images[idx], config.ats, sample_seed);
                        Var<T> loss = cross_entropy(out.logits, data.train[idx].label);
                        tape.backward(scale(loss, 1.0 / static_cast<double>(batch)));
                        ImageResult& r = seen[j];
                        r.label = data.train[idx].label;
                        r.predicted = out.trace.predicted;
                        r.loss = static_cast<double>(loss.value()[0]);
                        r.kprime = kprimes(out.trace);
                        r.macs = model_macs(out.trace, arch).total_macs;
                    }
                },
                threads);
            model.zero_grad();
            for (std::size_t c = 0; c < chunks; ++c) {
                for (std::size_t i = 0; i < params.size(); ++i) {
                    auto dst = params[i].grad.data();
                    auto src = chunk_grads[c][i].data();
                    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
                }
            }
            ++step;
            optim_step(opt, params, schedule.lr_at(step));
        }

        EpochMetrics tr;
        tr.epoch = epoch;
        tr.split = "train";
        summarize(seen, tr.loss, tr.top1, tr.mean_macs, tr.mean_kprime);
        if (!std::isfinite(tr.loss)) {
            throw NumericError("train: loss diverged at epoch " + std::to_string(epoch) + " (loss " +
                               std::to_string(tr.loss) + ")");
        }
        log.rows.push_back(tr);
        if (!data.val.empty()) {
            const EvalResult ev = evaluate(model, data.val, config.ats, threads, config.seed);
            log.rows.push_back({epoch, "val", ev.loss, ev.top1, ev.mean_kprime, ev.mean_macs});
        }
        if (config.log) {
            std::ostringstream os;
            os << "epoch " << epoch << " train loss " << fmt(tr.loss, 4) << " top1 " << fmt(tr.top1, 4);
            if (!data.val.empty()) os << " val top1 " << fmt(log.rows.back().top1, 4);
            config.log(os.str());
        }
    }
    return log;
}

template <typename T>
TrainLog fine_tune(Model<T>& model, const Dataset& data, const TrainConfig& config) {
    return train(model, data, config);
}

#define ATS_INSTANTIATE_TRAINER(T)                                                                           \
    template void optim_step(OptimState<T>&, std::vector<Parameter<T>>&, double);                            \
    template EvalResult evaluate(const Model<T>&, const std::vector<ShapeSample>&, const AtsConfig&,         \
                                 std::size_t, std::uint64_t);                                                \
    template TrainLog train(Model<T>&, const Dataset&, const TrainConfig&);                                  \
    template TrainLog fine_tune(Model<T>&, const Dataset&, const TrainConfig&);

ATS_INSTANTIATE_TRAINER(float)
ATS_INSTANTIATE_TRAINER(double)

}  // namespace ats
