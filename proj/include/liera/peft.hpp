#pragma once

// Low-rank adapters and the three ways of combining a frozen base weight
// with the learned delta: plain addition, the exact multiplicative update
// through the exponential map, and its first-order surrogate.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "liera/autograd.hpp"
#include "liera/conv.hpp"
#include "liera/liegroup.hpp"
#include "liera/rng.hpp"
#include "liera/tensor.hpp"

namespace liera::peft {

enum class LiftMode { Additive, LieExact, LieTaylor };

inline const char* lift_mode_name(LiftMode m) {
    switch (m) {
    case LiftMode::Additive: return "additive";
    case LiftMode::LieExact: return "lie_exact";
    case LiftMode::LieTaylor: return "lie_taylor";
    }
    throw ConfigError("unreachable lift mode");
}

inline LiftMode parse_lift_mode(const std::string& s) {
    if (s == "additive") return LiftMode::Additive;
    if (s == "lie_exact") return LiftMode::LieExact;
    if (s == "lie_taylor") return LiftMode::LieTaylor;
    throw ConfigError("unknown lift_mode \"" + s + "\" (expected additive, lie_exact, or lie_taylor)");
}

struct AdapterConfig {
    std::int64_t rank = 2;
    double alpha = 4.0;
    LiftMode lift_mode = LiftMode::LieTaylor;
    double init_stddev = 0.02;
    std::string target = "*";

    void validate() const {
        if (rank < 1) throw ConfigError("adapter rank must be >= 1, got " + std::to_string(rank));
        if (!(alpha > 0)) throw ConfigError("adapter alpha must be positive");
        if (!(init_stddev > 0)) throw ConfigError("adapter init_stddev must be positive");
        if (target.empty()) throw ConfigError("adapter target selector is empty");
    }
};

template <typename S>
struct LowRankFactors {
    Tensor<S> A; // (n, r)
    Tensor<S> B; // (r, m)
    S alpha = S(1);
    std::int64_t rank = 1;

    std::int64_t n() const { return A.shape().dim(0); }
    std::int64_t m() const { return B.shape().dim(1); }
    S scaling() const { return alpha / static_cast<S>(rank); }
};

// A ~ N(0, stddev^2), B = 0, so the initial delta is exactly zero.
template <typename S>
LowRankFactors<S> init_factors(std::int64_t n, std::int64_t m, std::int64_t r, S alpha, S init_stddev,
                               Rng& rng) {
    if (r < 1 || r > std::min(n, m))
        throw ShapeError("adapter rank " + std::to_string(r) + " out of range [1, min(" + std::to_string(n) +
                         ", " + std::to_string(m) + ")]");
    LowRankFactors<S> f;
    f.A = gaussian<S>(Shape{n, r}, S(0), init_stddev, rng);
    f.B = zeros<S>(Shape{r, m});
    f.alpha = alpha;
    f.rank = r;
    return f;
}

template <typename S>
Tensor<S> delta_matrix(const LowRankFactors<S>& f) {
    return scale(matmul(f.A, f.B), f.scaling());
}

template <typename S>
Tensor<S> delta_for_kernel(const LowRankFactors<S>& f, const Shape& kernel_shape) {
    if (kernel_shape.rank() != 4)
        throw ShapeError("delta_for_kernel: kernel shape must be 4-D, got " + kernel_shape.str());
    const std::int64_t n = kernel_shape.dim(0);
    const std::int64_t m = kernel_shape.dim(1) * kernel_shape.dim(2) * kernel_shape.dim(3);
    if (f.n() != n || f.m() != m)
        throw ShapeError("delta_for_kernel: factors (" + std::to_string(f.n()) + "," + std::to_string(f.m()) +
                         ") do not match kernel " + kernel_shape.str());
    return unflatten_kernel(delta_matrix(f), kernel_shape);
}

template <typename S>
Tensor<S> lift(const Tensor<S>& base, const Tensor<S>& delta, LiftMode mode) {
    require_same_shape(base, delta, "lift");
    switch (mode) {
    case LiftMode::Additive: return add(base, delta);
    case LiftMode::LieExact: return hadamard(base, lie::exp_map(delta).value);
    case LiftMode::LieTaylor: return add(base, hadamard(base, delta));
    }
    throw ConfigError("unreachable lift mode");
}

template <typename S>
struct AttachedAdapter {
    Tensor<S> base; // frozen; (n_out, n_in) matrix or (C_out, C_in, k, k) kernel
    LowRankFactors<S> factors;
    AdapterConfig config;
    bool merged = false;

    bool is_kernel() const { return base.shape().rank() == 4; }
};

template <typename S>
Tensor<S> adapter_delta(const AttachedAdapter<S>& a) {
    return a.is_kernel() ? delta_for_kernel(a.factors, a.base.shape()) : delta_matrix(a.factors);
}

template <typename S>
Tensor<S> effective_weight(const AttachedAdapter<S>& a) {
    if (a.merged) return a.base;
    return lift(a.base, adapter_delta(a), a.config.lift_mode);
}

// x is a single column (n_in) or a column-block (n_in, batch).
template <typename S>
Tensor<S> forward_linear(const AttachedAdapter<S>& a, const Tensor<S>& x,
                         const Tensor<S>* bias = nullptr) {
    const Tensor<S> w = effective_weight(a);
    const bool vec = x.shape().rank() == 1;
    const Tensor<S> x2 = vec ? reshape(x, Shape{x.shape().dim(0), 1}) : x;
    Tensor<S> h = matmul(w, x2);
    if (bias) {
        if (bias->shape().rank() != 1 || bias->shape().dim(0) != h.shape().dim(0))
            throw ShapeError("forward_linear: bias " + bias->shape().str() + " vs output " + h.shape().str());
        for (std::int64_t i = 0; i < h.shape().dim(0); ++i)
            for (std::int64_t j = 0; j < h.shape().dim(1); ++j) h.at(i, j) += bias->at(i);
    }
    return vec ? reshape(h, Shape{h.shape().dim(0)}) : h;
}

template <typename S>
Tensor<S> forward_conv(const AttachedAdapter<S>& a, const Tensor<S>& input, std::int64_t stride = 1,
                       std::int64_t pad = 0) {
    return conv2d(input, effective_weight(a), stride, pad);
}

template <typename S>
void merge(AttachedAdapter<S>& a) {
    if (a.merged) throw NumericError("merge: adapter already merged");
    a.base = effective_weight(a);
    a.merged = true;
}

template <typename S>
void unmerge(AttachedAdapter<S>& a) {
    if (!a.merged) throw NumericError("unmerge: adapter is not merged");
    const Tensor<S> delta = adapter_delta(a);
    switch (a.config.lift_mode) {
    case LiftMode::Additive:
        a.base = sub(a.base, delta);
        break;
    case LiftMode::LieExact:
        a.base = hadamard(a.base, lie::exp_map(scale(delta, S(-1))).value);
        break;
    case LiftMode::LieTaylor: {
        // base_merged = base * (1 + delta); invert elementwise.
        const Tensor<S> divisor = lie::taylor_exp(delta); // throws if any |1+delta| ~ 0
        a.base = hadamard(a.base, reciprocal(divisor));
        break;
    }
    }
    a.merged = false;
}

// Records the lift on a tape so gradients flow into the factors only. The
// base tensor enters as a frozen input; A and B must already be on the tape.
template <typename S>
autograd::VarId lift_on_tape(autograd::Tape<S>& tape, autograd::VarId base, autograd::VarId a_var,
                             autograd::VarId b_var, const AttachedAdapter<S>& adapter) {
    const S s = adapter.factors.scaling();
    autograd::VarId delta = tape.scale(tape.matmul(a_var, b_var), s);
    if (adapter.is_kernel()) delta = tape.reshape(delta, adapter.base.shape());
    switch (adapter.config.lift_mode) {
    case LiftMode::Additive: return tape.add(base, delta);
    case LiftMode::LieExact: {
        const S worst = max_abs(tape.val(delta));
        if (worst >= lie::exp_guard<S>())
            throw NumericError("lift: delta magnitude " + std::to_string(worst) + " trips the exp overflow guard");
        return tape.hadamard(base, tape.exp(delta));
    }
    case LiftMode::LieTaylor: return tape.add(base, tape.hadamard(base, delta));
    }
    throw ConfigError("unreachable lift mode");
}

inline std::int64_t trainable_param_count(const Shape& weight_shape, std::int64_t rank) {
    if (weight_shape.rank() == 2) return rank * (weight_shape.dim(0) + weight_shape.dim(1));
    if (weight_shape.rank() == 4)
        return rank * (weight_shape.dim(0) + weight_shape.dim(1) * weight_shape.dim(2) * weight_shape.dim(3));
    throw ShapeError("trainable_param_count: weight must be rank 2 or 4, got " + weight_shape.str());
}

struct BudgetRow {
    std::string layer;
    std::int64_t trainable = 0;
    std::int64_t full = 0;
};

struct BudgetTable {
    std::vector<BudgetRow> rows;
    std::int64_t trainable_total = 0;
    std::int64_t full_total = 0;
    double ratio = 0.0; // trainable / full fine-tune
};

// layers: (name, weight shape) for every adapter-targeted layer.
inline BudgetTable budget_table(const std::vector<std::pair<std::string, Shape>>& layers, std::int64_t rank) {
    BudgetTable t;
    for (const auto& [name, shape] : layers) {
        BudgetRow row;
        row.layer = name;
        row.trainable = trainable_param_count(shape, rank);
        row.full = static_cast<std::int64_t>(shape.numel());
        t.trainable_total += row.trainable;
        t.full_total += row.full;
        t.rows.push_back(std::move(row));
    }
    if (t.full_total > 0) t.ratio = static_cast<double>(t.trainable_total) / static_cast<double>(t.full_total);
    return t;
}

} // namespace liera::peft
