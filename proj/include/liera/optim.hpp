#pragma once

// SGD with momentum and AdamW (decoupled weight decay), plus the
// classification loss/metric pair used by every training phase.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "liera/autograd.hpp"
#include "liera/io.hpp"
#include "liera/tensor.hpp"

namespace liera::optim {

enum class OptKind { Sgd, AdamW };

inline const char* opt_kind_name(OptKind k) { return k == OptKind::Sgd ? "sgd" : "adamw"; }

inline OptKind parse_opt_kind(const std::string& s) {
    if (s == "sgd") return OptKind::Sgd;
    if (s == "adamw") return OptKind::AdamW;
    throw ConfigError("unknown optimizer \"" + s + "\" (expected sgd or adamw)");
}

struct OptimConfig {
    OptKind kind = OptKind::AdamW;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double momentum = 0.0;
    double clip_norm = 0.0; // global-norm gradient clip; 0 disables

    void validate() const {
        if (!(lr > 0)) throw ConfigError("optim lr must be positive");
        if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
            throw ConfigError("optim betas must lie in (0,1)");
        if (!(eps > 0)) throw ConfigError("optim eps must be positive");
        if (weight_decay < 0) throw ConfigError("optim weight_decay must be >= 0");
        if (momentum < 0 || momentum >= 1) throw ConfigError("optim momentum must lie in [0,1)");
        if (clip_norm < 0) throw ConfigError("optim clip_norm must be >= 0");
    }
};

template <typename S>
struct TrainState {
    std::int64_t step = 0;
    std::map<std::string, Tensor<S>> m; // first moment (AdamW) or velocity (SGD)
    std::map<std::string, Tensor<S>> v; // second moment (AdamW only)
};

template <typename S>
autograd::VarId cross_entropy(autograd::Tape<S>& tape, autograd::VarId logits, std::vector<int> labels) {
    return tape.softmax_xent(logits, std::move(labels));
}

// Argmax matches; ties resolve to the lowest class index.
template <typename S>
std::int64_t correct_count(const Tensor<S>& logits, const std::vector<int>& labels) {
    if (logits.shape().rank() != 2) throw ShapeError("accuracy: logits must be (batch, C)");
    const std::int64_t batch = logits.shape().dim(0), classes = logits.shape().dim(1);
    if (static_cast<std::int64_t>(labels.size()) != batch)
        throw ShapeError("accuracy: label count does not match batch");
    std::int64_t hits = 0;
    for (std::int64_t b = 0; b < batch; ++b) {
        std::int64_t best = 0;
        for (std::int64_t c = 1; c < classes; ++c)
            if (logits.at(b, c) > logits.at(b, best)) best = c;
        if (labels[static_cast<std::size_t>(b)] < 0 || labels[static_cast<std::size_t>(b)] >= classes)
            throw ShapeError("accuracy: label out of range");
        if (best == labels[static_cast<std::size_t>(b)]) ++hits;
    }
    return hits;
}

template <typename S>
double accuracy(const Tensor<S>& logits, const std::vector<int>& labels) {
    return static_cast<double>(correct_count(logits, labels)) /
           static_cast<double>(logits.shape().dim(0));
}

// One optimizer step over the named parameters. Every parameter must have a
// gradient; parameters not listed are untouched by construction.
template <typename S>
std::vector<std::pair<std::string, Tensor<S>>> step(TrainState<S>& state, const OptimConfig& cfg,
                                                    const std::vector<std::pair<std::string, Tensor<S>>>& params,
                                                    std::map<std::string, Tensor<S>> grads) {
    cfg.validate();
    for (const auto& [name, value] : params)
        if (grads.find(name) == grads.end())
            throw NumericError("optimizer step: missing gradient for parameter \"" + name + "\"");

    if (cfg.clip_norm > 0) {
        double sq = 0;
        for (const auto& [name, g] : grads) {
            (void)name;
            for (std::uint64_t i = 0; i < g.numel(); ++i) sq += static_cast<double>(g[i]) * g[i];
        }
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
            const S factor = static_cast<S>(cfg.clip_norm / norm);
            for (auto& [name, g] : grads) {
                (void)name;
                g = scale(g, factor);
            }
        }
    }

    state.step += 1;
    const S lr = static_cast<S>(cfg.lr);
    std::vector<std::pair<std::string, Tensor<S>>> updated;
    updated.reserve(params.size());

    for (const auto& [name, theta] : params) {
        const Tensor<S>& g = grads.at(name);
        require_same_shape(theta, g, "optimizer step");
        Tensor<S> next(theta.shape());

        if (cfg.kind == OptKind::Sgd) {
            auto it = state.m.find(name);
            if (it == state.m.end()) it = state.m.emplace(name, zeros<S>(theta.shape())).first;
            Tensor<S>& vel = it->second;
            const S mu = static_cast<S>(cfg.momentum);
            for (std::uint64_t i = 0; i < theta.numel(); ++i) {
                vel[i] = mu * vel[i] + g[i];
                next[i] = theta[i] - lr * vel[i];
            }
        } else {
            auto mi = state.m.find(name);
            if (mi == state.m.end()) mi = state.m.emplace(name, zeros<S>(theta.shape())).first;
            auto vi = state.v.find(name);
            if (vi == state.v.end()) vi = state.v.emplace(name, zeros<S>(theta.shape())).first;
            Tensor<S>& m1 = mi->second;
            Tensor<S>& m2 = vi->second;
            const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
            const S bc1 = S(1) - static_cast<S>(std::pow(cfg.beta1, static_cast<double>(state.step)));
            const S bc2 = S(1) - static_cast<S>(std::pow(cfg.beta2, static_cast<double>(state.step)));
            const S wd = static_cast<S>(cfg.weight_decay);
            for (std::uint64_t i = 0; i < theta.numel(); ++i) {
                m1[i] = b1 * m1[i] + (S(1) - b1) * g[i];
                m2[i] = b2 * m2[i] + (S(1) - b2) * g[i] * g[i];
                const S mhat = m1[i] / bc1;
                const S vhat = m2[i] / bc2;
                next[i] = theta[i] - lr * (mhat / (std::sqrt(vhat) + static_cast<S>(cfg.eps)) + wd * theta[i]);
            }
        }
        updated.emplace_back(name, check_finite(next, "optimizer step"));
    }
    return updated;
}

// Moment buffers round-trip through the container format by name, so an
// interrupted run can resume with identical optimizer state.
template <typename S>
void put_train_state(io::Lckp& ck, const TrainState<S>& state) {
    ck.put_text("optim.step", std::to_string(state.step));
    for (const auto& [name, t] : state.m) ck.put_tensor("optim.m." + name, t);
    for (const auto& [name, t] : state.v) ck.put_tensor("optim.v." + name, t);
}

template <typename S>
TrainState<S> get_train_state(const io::Lckp& ck) {
    TrainState<S> state;
    if (!ck.has("optim.step")) return state;
    state.step = std::stoll(ck.get_text("optim.step"));
    for (const auto& e : ck.entries()) {
        if (e.name.rfind("optim.m.", 0) == 0) state.m.emplace(e.name.substr(8), ck.get_tensor<S>(e.name));
        if (e.name.rfind("optim.v.", 0) == 0) state.v.emplace(e.name.substr(8), ck.get_tensor<S>(e.name));
    }
    return state;
}

} // namespace liera::optim
