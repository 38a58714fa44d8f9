#pragma once

// 2-D convolution lowered to a matrix product: conv2d(x, K) is exactly
// fold(matmul(flatten_kernel(K), im2col(x))). Zero padding, square kernels.

#include <cstdint>
#include <string>

#include "liera/tensor.hpp"

namespace liera {

struct ConvDims {
    std::int64_t batch, c_in, h, w;
    std::int64_t k, stride, pad;
    std::int64_t h_out, w_out;
};

inline ConvDims conv_dims(const Shape& input, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    if (input.rank() != 4) throw ShapeError("conv: input must be (batch, C_in, H, W), got " + input.str());
    if (k <= 0 || stride <= 0 || pad < 0) throw ShapeError("conv: need k>0, stride>0, pad>=0");
    ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), k, stride, pad, 0, 0};
    const std::int64_t hn = d.h + 2 * pad - k;
    const std::int64_t wn = d.w + 2 * pad - k;
    if (hn < 0 || wn < 0 || hn % stride != 0 || wn % stride != 0)
        throw ShapeError("conv: output dims not integral for input " + input.str() + ", k=" + std::to_string(k) +
                         ", stride=" + std::to_string(stride) + ", pad=" + std::to_string(pad));
    d.h_out = hn / stride + 1;
    d.w_out = wn / stride + 1;
    return d;
}

// Patch matrix (C_in*k*k, batch*H_out*W_out); column order is (b, y, x)
// row-major, row order is (c, ki, kj) row-major.
template <typename S>
Tensor<S> im2col(const Tensor<S>& input, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    const ConvDims d = conv_dims(input.shape(), k, stride, pad);
    const std::int64_t rows = d.c_in * k * k;
    const std::int64_t cols = d.batch * d.h_out * d.w_out;
    Tensor<S> out(Shape{rows, cols});
    std::int64_t col = 0;
    for (std::int64_t b = 0; b < d.batch; ++b) {
        for (std::int64_t y = 0; y < d.h_out; ++y) {
            for (std::int64_t x = 0; x < d.w_out; ++x, ++col) {
                std::int64_t row = 0;
                for (std::int64_t c = 0; c < d.c_in; ++c) {
                    for (std::int64_t ki = 0; ki < k; ++ki) {
                        for (std::int64_t kj = 0; kj < k; ++kj, ++row) {
                            const std::int64_t iy = y * stride + ki - pad;
                            const std::int64_t ix = x * stride + kj - pad;
                            const bool inside = iy >= 0 && iy < d.h && ix >= 0 && ix < d.w;
                            out.at(row, col) = inside ? input.at(b, c, iy, ix) : S(0);
                        }
                    }
                }
            }
        }
    }
    return out;
}

// Adjoint of im2col: scatter-adds columns back into (batch, C_in, H, W).
template <typename S>
Tensor<S> col2im(const Tensor<S>& cols, const Shape& input_shape, std::int64_t k, std::int64_t stride,
                 std::int64_t pad) {
    const ConvDims d = conv_dims(input_shape, k, stride, pad);
    if (cols.shape() != Shape{d.c_in * k * k, d.batch * d.h_out * d.w_out})
        throw ShapeError("col2im: column matrix " + cols.shape().str() + " does not match input " +
                         input_shape.str());
    Tensor<S> out(input_shape);
    std::int64_t col = 0;
    for (std::int64_t b = 0; b < d.batch; ++b) {
        for (std::int64_t y = 0; y < d.h_out; ++y) {
            for (std::int64_t x = 0; x < d.w_out; ++x, ++col) {
                std::int64_t row = 0;
                for (std::int64_t c = 0; c < d.c_in; ++c) {
                    for (std::int64_t ki = 0; ki < k; ++ki) {
                        for (std::int64_t kj = 0; kj < k; ++kj, ++row) {
                            const std::int64_t iy = y * stride + ki - pad;
                            const std::int64_t ix = x * stride + kj - pad;
                            if (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                                out.at(b, c, iy, ix) += cols.at(row, col);
                        }
                    }
                }
            }
        }
    }
    return out;
}

// (C_out, batch*H_out*W_out) product matrix -> (batch, C_out, H_out, W_out).
template <typename S>
Tensor<S> fold_conv_output(const Tensor<S>& prod, const ConvDims& d, std::int64_t c_out) {
    Tensor<S> out(Shape{d.batch, c_out, d.h_out, d.w_out});
    for (std::int64_t co = 0; co < c_out; ++co) {
        std::int64_t col = 0;
        for (std::int64_t b = 0; b < d.batch; ++b)
            for (std::int64_t y = 0; y < d.h_out; ++y)
                for (std::int64_t x = 0; x < d.w_out; ++x, ++col) out.at(b, co, y, x) = prod.at(co, col);
    }
    return out;
}

// Inverse of fold_conv_output, used on upstream gradients.
template <typename S>
Tensor<S> unfold_conv_output(const Tensor<S>& out, const ConvDims& d) {
    const std::int64_t c_out = out.shape().dim(1);
    Tensor<S> prod(Shape{c_out, d.batch * d.h_out * d.w_out});
    for (std::int64_t co = 0; co < c_out; ++co) {
        std::int64_t col = 0;
        for (std::int64_t b = 0; b < d.batch; ++b)
            for (std::int64_t y = 0; y < d.h_out; ++y)
                for (std::int64_t x = 0; x < d.w_out; ++x, ++col) prod.at(co, col) = out.at(b, co, y, x);
    }
    return prod;
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernel, std::int64_t stride = 1, std::int64_t pad = 0) {
    if (kernel.shape().rank() != 4)
        throw ShapeError("conv2d: kernel must be (C_out, C_in, k, k), got " + kernel.shape().str());
    if (kernel.shape().dim(2) != kernel.shape().dim(3))
        throw ShapeError("conv2d: only square kernels, got " + kernel.shape().str());
    const std::int64_t k = kernel.shape().dim(2);
    const ConvDims d = conv_dims(input.shape(), k, stride, pad);
    if (kernel.shape().dim(1) != d.c_in)
        throw ShapeError("conv2d: kernel C_in " + std::to_string(kernel.shape().dim(1)) + " vs input C_in " +
                         std::to_string(d.c_in));
    const Tensor<S> cols = im2col(input, k, stride, pad);
    const Tensor<S> prod = matmul(flatten_kernel(kernel), cols);
    return check_finite(fold_conv_output(prod, d, kernel.shape().dim(0)), "conv2d");
}

} // namespace liera
