#pragma once

// Dense row-major tensors (rank 0..4) and the deterministic primitive ops
// everything else is built on. The reference paths accumulate left-to-right
// with no reassociation so seeded runs are bit-reproducible.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "liera/error.hpp"

namespace liera {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

inline const char* dtype_name(DType d) { return d == DType::F32 ? "f32" : "f64"; }

template <typename S>
struct dtype_of;
template <>
struct dtype_of<float> {
    static constexpr DType value = DType::F32;
};
template <>
struct dtype_of<double> {
    static constexpr DType value = DType::F64;
};

// Minimum |entry| treated as nonzero (group membership, reciprocal guard).
template <typename S>
constexpr S membership_eps() {
    if constexpr (std::is_same_v<S, float>)
        return 1e-6f;
    else
        return 1e-12;
}

namespace stats {
// Test hook: counts tensor-level map_exp invocations.
inline thread_local std::uint64_t exp_calls = 0;
} // namespace stats

class Shape {
public:
    Shape() = default; // rank 0: scalar, one element

    Shape(std::initializer_list<std::int64_t> dims) : Shape(std::vector<std::int64_t>(dims)) {}

    explicit Shape(std::vector<std::int64_t> dims) : dims_(std::move(dims)) {
        if (dims_.size() > 4) throw ShapeError("shape rank " + std::to_string(dims_.size()) + " exceeds 4");
        std::uint64_t n = 1;
        for (std::int64_t d : dims_) {
            if (d <= 0) throw ShapeError("shape extent must be positive, got " + std::to_string(d));
            const std::uint64_t ud = static_cast<std::uint64_t>(d);
            if (n > UINT64_MAX / ud) throw ShapeError("shape element count overflows u64");
            n *= ud;
        }
        numel_ = n;
    }

    int rank() const { return static_cast<int>(dims_.size()); }
    std::int64_t dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
    const std::vector<std::int64_t>& dims() const { return dims_; }
    std::uint64_t numel() const { return numel_; }

    bool operator==(const Shape& o) const { return dims_ == o.dims_; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (i) os << ',';
            os << dims_[i];
        }
        os << ')';
        return os.str();
    }

    // Row-major multi-index of a flat offset, e.g. "(1,0,2,2)".
    std::string multi_index(std::uint64_t flat) const {
        if (dims_.empty()) return "()";
        std::vector<std::uint64_t> idx(dims_.size());
        for (std::size_t i = dims_.size(); i-- > 0;) {
            const auto d = static_cast<std::uint64_t>(dims_[i]);
            idx[i] = flat % d;
            flat /= d;
        }
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (i) os << ',';
            os << idx[i];
        }
        os << ')';
        return os.str();
    }

private:
    std::vector<std::int64_t> dims_;
    std::uint64_t numel_ = 1;
};

template <typename S>
class Tensor {
    static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>, "Tensor supports float and double");

public:
    Tensor() : shape_(), data_(1, S(0)) {} // scalar zero

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_.numel(), S(0)) {}

    Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_.numel())
            throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_.str());
    }

    static constexpr DType dtype() { return dtype_of<S>::value; }
    const Shape& shape() const { return shape_; }
    std::uint64_t numel() const { return shape_.numel(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& vec() { return data_; }
    const std::vector<S>& vec() const { return data_; }

    S& operator[](std::uint64_t i) { return data_[i]; }
    S operator[](std::uint64_t i) const { return data_[i]; }

    // Row-major accessors; rank is checked, extents are not (hot path).
    S& at(std::int64_t i) { return data_[static_cast<std::uint64_t>(i)]; }
    S at(std::int64_t i) const { return data_[static_cast<std::uint64_t>(i)]; }
    S& at(std::int64_t i, std::int64_t j) { return data_[static_cast<std::uint64_t>(i * shape_.dim(1) + j)]; }
    S at(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::uint64_t>(i * shape_.dim(1) + j)]; }
    S& at(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) {
        return data_[static_cast<std::uint64_t>(((b * shape_.dim(1) + c) * shape_.dim(2) + y) * shape_.dim(3) + x)];
    }
    S at(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) const {
        return data_[static_cast<std::uint64_t>(((b * shape_.dim(1) + c) * shape_.dim(2) + y) * shape_.dim(3) + x)];
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    Shape shape_;
    std::vector<S> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Every public op funnels its result through here: non-finite values are an
// error, never silent.
template <typename S>
const Tensor<S>& check_finite(const Tensor<S>& t, const char* op) {
    for (std::uint64_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t[i]))
            throw NumericError(std::string(op) + ": non-finite value at " + t.shape().multi_index(i));
    }
    return t;
}

template <typename S>
Tensor<S> zeros(const Shape& shape) {
    return Tensor<S>(shape);
}

template <typename S>
Tensor<S> ones(const Shape& shape) {
    Tensor<S> t(shape);
    for (std::uint64_t i = 0; i < t.numel(); ++i) t[i] = S(1);
    return t;
}

template <typename S>
Tensor<S> full(const Shape& shape, S value) {
    if (!std::isfinite(value)) throw NumericError("full: non-finite fill value");
    Tensor<S> t(shape);
    for (std::uint64_t i = 0; i < t.numel(); ++i) t[i] = value;
    return t;
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "add");
    Tensor<S> c(a.shape());
    for (std::uint64_t i = 0; i < c.numel(); ++i) c[i] = a[i] + b[i];
    return check_finite(c, "add");
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "sub");
    Tensor<S> c(a.shape());
    for (std::uint64_t i = 0; i < c.numel(); ++i) c[i] = a[i] - b[i];
    return check_finite(c, "sub");
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S s) {
    if (!std::isfinite(s)) throw NumericError("scale: non-finite factor");
    Tensor<S> c(a.shape());
    for (std::uint64_t i = 0; i < c.numel(); ++i) c[i] = a[i] * s;
    return check_finite(c, "scale");
}

template <typename S>
Tensor<S> hadamard(const Tensor<S>& a, const Tensor<S>& b) {
    require_same_shape(a, b, "hadamard");
    Tensor<S> c(a.shape());
    for (std::uint64_t i = 0; i < c.numel(); ++i) c[i] = a[i] * b[i];
    return check_finite(c, "hadamard");
}

template <typename S>
Tensor<S> map_exp(const Tensor<S>& a) {
    ++stats::exp_calls;
    Tensor<S> c(a.shape());
    for (std::uint64_t i = 0; i < c.numel(); ++i) c[i] = std::exp(a[i]);
    return check_finite(c, "map_exp");
}

template <typename S>
Tensor<S> reciprocal(const Tensor<S>& a, S eps = membership_eps<S>()) {
    Tensor<S> c(a.shape());
    for (std::uint64_t i = 0; i < c.numel(); ++i) {
        if (std::abs(a[i]) <= eps)
            throw NumericError("reciprocal: |entry| <= " + std::to_string(eps) + " at " + a.shape().multi_index(i));
        c[i] = S(1) / a[i];
    }
    return check_finite(c, "reciprocal");
}

template <typename S>
Tensor<S> map_ln(const Tensor<S>& a) {
    Tensor<S> c(a.shape());
    for (std::uint64_t i = 0; i < c.numel(); ++i) {
        if (!(a[i] > S(0)))
            throw NumericError("map_ln: entry not positive at " + a.shape().multi_index(i));
        c[i] = std::log(a[i]);
    }
    return check_finite(c, "map_ln");
}

// C = A*B with plain left-to-right accumulation over k (bit-reproducible).
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape().rank() != 2 || b.shape().rank() != 2)
        throw ShapeError("matmul: expects matrices, got " + a.shape().str() + " and " + b.shape().str());
    const std::int64_t n = a.shape().dim(0), r = a.shape().dim(1), m = b.shape().dim(1);
    if (b.shape().dim(0) != r)
        throw ShapeError("matmul: inner dims disagree, " + a.shape().str() + " vs " + b.shape().str());
    Tensor<S> c(Shape{n, m});
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < m; ++j) {
            S acc = S(0);
            for (std::int64_t k = 0; k < r; ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    }
    return check_finite(c, "matmul");
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
    if (a.shape().rank() != 2) throw ShapeError("transpose: expects a matrix, got " + a.shape().str());
    const std::int64_t n = a.shape().dim(0), m = a.shape().dim(1);
    Tensor<S> c(Shape{m, n});
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) c.at(j, i) = a.at(i, j);
    return c;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, const Shape& new_shape) {
    if (new_shape.numel() != a.numel())
        throw ShapeError("reshape: element count mismatch, " + a.shape().str() + " to " + new_shape.str());
    return Tensor<S>(new_shape, a.vec());
}

// Kernel (C_out, C_in, k, k) <-> matrix (C_out, C_in*k*k), row-major. The two
// views share the same flat data, so the round trip is bit-exact.
template <typename S>
Tensor<S> flatten_kernel(const Tensor<S>& kernel) {
    if (kernel.shape().rank() != 4)
        throw ShapeError("flatten_kernel: expects a 4-D kernel, got " + kernel.shape().str());
    const auto& d = kernel.shape().dims();
    return reshape(kernel, Shape{d[0], d[1] * d[2] * d[3]});
}

template <typename S>
Tensor<S> unflatten_kernel(const Tensor<S>& matrix, const Shape& kernel_shape) {
    if (matrix.shape().rank() != 2)
        throw ShapeError("unflatten_kernel: expects a matrix, got " + matrix.shape().str());
    if (kernel_shape.rank() != 4)
        throw ShapeError("unflatten_kernel: target shape must be 4-D, got " + kernel_shape.str());
    if (matrix.shape().dim(0) != kernel_shape.dim(0) ||
        matrix.shape().dim(1) != kernel_shape.dim(1) * kernel_shape.dim(2) * kernel_shape.dim(3))
        throw ShapeError("unflatten_kernel: matrix " + matrix.shape().str() + " does not match kernel " +
                         kernel_shape.str());
    return reshape(matrix, kernel_shape);
}

template <typename S>
S frobenius_norm(const Tensor<S>& a) {
    S acc = S(0);
    for (std::uint64_t i = 0; i < a.numel(); ++i) acc += a[i] * a[i];
    return std::sqrt(acc);
}

template <typename S>
S max_abs(const Tensor<S>& a) {
    S m = S(0);
    for (std::uint64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i]));
    return m;
}

template <typename S>
S min_abs(const Tensor<S>& a) {
    S m = std::numeric_limits<S>::infinity();
    for (std::uint64_t i = 0; i < a.numel(); ++i) m = std::min(m, std::abs(a[i]));
    return m;
}

template <typename S>
S sum_all(const Tensor<S>& a) {
    S acc = S(0);
    for (std::uint64_t i = 0; i < a.numel(); ++i) acc += a[i];
    return acc;
}

// True iff |a_i - b_i| <= atol + rtol*|b_i| for every i.
template <typename S>
bool allclose(const Tensor<S>& a, const Tensor<S>& b, S rtol, S atol) {
    require_same_shape(a, b, "allclose");
    for (std::uint64_t i = 0; i < a.numel(); ++i) {
        if (std::abs(a[i] - b[i]) > atol + rtol * std::abs(b[i])) return false;
    }
    return true;
}

} // namespace liera
