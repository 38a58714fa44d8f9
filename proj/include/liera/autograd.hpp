#pragma once

// Tape-based reverse-mode differentiation over the tensor primitives. Forward
// values are computed eagerly at record time; backward sweeps the tape in
// reverse creation order with a fixed accumulation order, so gradients are
// bit-deterministic for a given tape.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "liera/conv.hpp"
#include "liera/tensor.hpp"

namespace liera::autograd {

struct VarId {
    std::uint32_t index = 0;
    bool operator==(const VarId& o) const { return index == o.index; }
};

enum class OpKind {
    Input,
    Param,
    MatMul,
    Add,
    AddBias,
    Hadamard,
    Exp,
    Scale,
    Reshape,
    Transpose,
    Conv2d,
    Relu,
    Sum,
    SoftmaxXent,
};

template <typename S>
struct Node {
    OpKind kind;
    std::vector<VarId> inputs;
    Tensor<S> value;
    // Operation-specific constants.
    S scale = S(0);
    std::int64_t stride = 1, pad = 0;
    std::vector<int> labels; // SoftmaxXent class labels
};

template <typename S>
using GradMap = std::unordered_map<std::uint32_t, Tensor<S>>;

template <typename S>
class Tape {
public:
    VarId var_input(Tensor<S> value) { return append(OpKind::Input, {}, std::move(value)); }

    VarId var_param(Tensor<S> value) {
        const VarId id = append(OpKind::Param, {}, std::move(value));
        param_flags_.back() = true;
        return id;
    }

    VarId matmul(VarId a, VarId b) { return append(OpKind::MatMul, {a, b}, liera::matmul(val(a), val(b))); }

    VarId add(VarId a, VarId b) { return append(OpKind::Add, {a, b}, liera::add(val(a), val(b))); }

    // (batch, n) + row-broadcast bias (n).
    VarId add_bias(VarId a, VarId bias) {
        const Tensor<S>& m = val(a);
        const Tensor<S>& v = val(bias);
        if (m.shape().rank() != 2 || v.shape().rank() != 1 || v.shape().dim(0) != m.shape().dim(1))
            throw ShapeError("add_bias: " + m.shape().str() + " vs bias " + v.shape().str());
        Tensor<S> out(m.shape());
        for (std::int64_t i = 0; i < m.shape().dim(0); ++i)
            for (std::int64_t j = 0; j < m.shape().dim(1); ++j) out.at(i, j) = m.at(i, j) + v.at(j);
        return append(OpKind::AddBias, {a, bias}, check_finite(out, "add_bias"));
    }

    VarId hadamard(VarId a, VarId b) { return append(OpKind::Hadamard, {a, b}, liera::hadamard(val(a), val(b))); }

    VarId exp(VarId a) { return append(OpKind::Exp, {a}, liera::map_exp(val(a))); }

    VarId scale(VarId a, S s) {
        const VarId id = append(OpKind::Scale, {a}, liera::scale(val(a), s));
        nodes_[id.index].scale = s;
        return id;
    }

    VarId reshape(VarId a, const Shape& shape) { return append(OpKind::Reshape, {a}, liera::reshape(val(a), shape)); }

    VarId transpose(VarId a) { return append(OpKind::Transpose, {a}, liera::transpose(val(a))); }

    VarId conv2d(VarId input, VarId kernel, std::int64_t stride = 1, std::int64_t pad = 0) {
        const VarId id = append(OpKind::Conv2d, {input, kernel}, liera::conv2d(val(input), val(kernel), stride, pad));
        nodes_[id.index].stride = stride;
        nodes_[id.index].pad = pad;
        return id;
    }

    VarId relu(VarId a) {
        const Tensor<S>& x = val(a);
        Tensor<S> out(x.shape());
        for (std::uint64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > S(0) ? x[i] : S(0);
        return append(OpKind::Relu, {a}, std::move(out));
    }

    VarId sum(VarId a) {
        Tensor<S> out;
        out[0] = sum_all(val(a));
        return append(OpKind::Sum, {a}, check_finite(out, "sum"));
    }

    // Mean cross-entropy of logits (batch, C) against integer labels; fused
    // with a max-subtracted log-sum-exp for stability.
    VarId softmax_xent(VarId logits, std::vector<int> labels) {
        const Tensor<S>& z = val(logits);
        if (z.shape().rank() != 2) throw ShapeError("softmax_xent: logits must be (batch, C), got " + z.shape().str());
        const std::int64_t batch = z.shape().dim(0), classes = z.shape().dim(1);
        if (static_cast<std::int64_t>(labels.size()) != batch)
            throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch " +
                             std::to_string(batch));
        S loss = S(0);
        for (std::int64_t b = 0; b < batch; ++b) {
            if (labels[b] < 0 || labels[b] >= classes)
                throw ShapeError("softmax_xent: label " + std::to_string(labels[b]) + " out of range [0," +
                                 std::to_string(classes) + ")");
            S zmax = z.at(b, 0);
            for (std::int64_t c = 1; c < classes; ++c) zmax = std::max(zmax, z.at(b, c));
            S lse = S(0);
            for (std::int64_t c = 0; c < classes; ++c) lse += std::exp(z.at(b, c) - zmax);
            loss += zmax + std::log(lse) - z.at(b, labels[b]);
        }
        Tensor<S> out;
        out[0] = loss / static_cast<S>(batch);
        const VarId id = append(OpKind::SoftmaxXent, {logits}, check_finite(out, "softmax_xent"));
        nodes_[id.index].labels = std::move(labels);
        return id;
    }

    const Tensor<S>& val(VarId id) const { return nodes_[id.index].value; }
    const Node<S>& node(VarId id) const { return nodes_[id.index]; }
    std::size_t size() const { return nodes_.size(); }
    bool is_param(VarId id) const { return param_flags_[id.index]; }

    // Reverse sweep from a scalar loss; returns gradients for params only.
    GradMap<S> backward(VarId loss) const {
        if (val(loss).shape().rank() != 0)
            throw ShapeError("backward: loss must be scalar, got " + val(loss).shape().str());
        std::vector<Tensor<S>> grads(nodes_.size());
        std::vector<bool> has_grad(nodes_.size(), false);
        grads[loss.index] = ones<S>(Shape{});
        has_grad[loss.index] = true;

        auto accumulate = [&](VarId target, Tensor<S> g) {
            if (has_grad[target.index]) {
                grads[target.index] = liera::add(grads[target.index], g);
            } else {
                grads[target.index] = std::move(g);
                has_grad[target.index] = true;
            }
        };

        for (std::uint32_t i = loss.index + 1; i-- > 0;) {
            if (!has_grad[i]) continue;
            const Node<S>& n = nodes_[i];
            const Tensor<S>& g = grads[i];
            switch (n.kind) {
            case OpKind::Input:
            case OpKind::Param:
                break;
            case OpKind::MatMul: {
                const Tensor<S>& a = val(n.inputs[0]);
                const Tensor<S>& b = val(n.inputs[1]);
                accumulate(n.inputs[0], liera::matmul(g, liera::transpose(b)));
                accumulate(n.inputs[1], liera::matmul(liera::transpose(a), g));
                break;
            }
            case OpKind::Add:
                accumulate(n.inputs[0], g);
                accumulate(n.inputs[1], g);
                break;
            case OpKind::AddBias: {
                accumulate(n.inputs[0], g);
                const std::int64_t rows = g.shape().dim(0), cols = g.shape().dim(1);
                Tensor<S> db(Shape{cols});
                for (std::int64_t j = 0; j < cols; ++j) {
                    S acc = S(0);
                    for (std::int64_t r = 0; r < rows; ++r) acc += g.at(r, j);
                    db.at(j) = acc;
                }
                accumulate(n.inputs[1], std::move(db));
                break;
            }
            case OpKind::Hadamard:
                accumulate(n.inputs[0], liera::hadamard(g, val(n.inputs[1])));
                accumulate(n.inputs[1], liera::hadamard(g, val(n.inputs[0])));
                break;
            case OpKind::Exp:
                accumulate(n.inputs[0], liera::hadamard(g, n.value));
                break;
            case OpKind::Scale:
                accumulate(n.inputs[0], liera::scale(g, n.scale));
                break;
            case OpKind::Reshape:
                accumulate(n.inputs[0], liera::reshape(g, val(n.inputs[0]).shape()));
                break;
            case OpKind::Transpose:
                accumulate(n.inputs[0], liera::transpose(g));
                break;
            case OpKind::Conv2d: {
                const Tensor<S>& x = val(n.inputs[0]);
                const Tensor<S>& kernel = val(n.inputs[1]);
                const std::int64_t k = kernel.shape().dim(2);
                const ConvDims d = conv_dims(x.shape(), k, n.stride, n.pad);
                const Tensor<S> g_cols = unfold_conv_output(g, d);
                const Tensor<S> k_flat = flatten_kernel(kernel);
                accumulate(n.inputs[0],
                           col2im(liera::matmul(liera::transpose(k_flat), g_cols), x.shape(), k, n.stride, n.pad));
                const Tensor<S> cols = im2col(x, k, n.stride, n.pad);
                accumulate(n.inputs[1],
                           unflatten_kernel(liera::matmul(g_cols, liera::transpose(cols)), kernel.shape()));
                break;
            }
            case OpKind::Relu: {
                const Tensor<S>& x = val(n.inputs[0]);
                Tensor<S> dx(x.shape());
                for (std::uint64_t j = 0; j < x.numel(); ++j) dx[j] = x[j] > S(0) ? g[j] : S(0);
                accumulate(n.inputs[0], std::move(dx));
                break;
            }
            case OpKind::Sum:
                accumulate(n.inputs[0], full(val(n.inputs[0]).shape(), g[0]));
                break;
            case OpKind::SoftmaxXent: {
                const Tensor<S>& z = val(n.inputs[0]);
                const std::int64_t batch = z.shape().dim(0), classes = z.shape().dim(1);
                Tensor<S> dz(z.shape());
                for (std::int64_t b = 0; b < batch; ++b) {
                    S zmax = z.at(b, 0);
                    for (std::int64_t c = 1; c < classes; ++c) zmax = std::max(zmax, z.at(b, c));
                    S lse = S(0);
                    for (std::int64_t c = 0; c < classes; ++c) lse += std::exp(z.at(b, c) - zmax);
                    for (std::int64_t c = 0; c < classes; ++c) {
                        const S p = std::exp(z.at(b, c) - zmax) / lse;
                        const S onehot = n.labels[static_cast<std::size_t>(b)] == c ? S(1) : S(0);
                        dz.at(b, c) = g[0] * (p - onehot) / static_cast<S>(batch);
                    }
                }
                accumulate(n.inputs[0], std::move(dz));
                break;
            }
            }
        }

        GradMap<S> out;
        for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
            if (!param_flags_[i]) continue;
            out.emplace(i, has_grad[i] ? std::move(grads[i]) : zeros<S>(nodes_[i].value.shape()));
        }
        return out;
    }

private:
    VarId append(OpKind kind, std::vector<VarId> inputs, Tensor<S> value) {
        nodes_.push_back(Node<S>{kind, std::move(inputs), std::move(value), S(0), 1, 0, {}});
        param_flags_.push_back(false);
        return VarId{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    std::vector<Node<S>> nodes_;
    std::vector<bool> param_flags_;
};

} // namespace liera::autograd
