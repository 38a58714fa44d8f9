#include "doctest.h"

#include <cstdint>

#include "liera/conv.hpp"
#include "liera/rng.hpp"
#include "test_util.hpp"

using namespace liera;
using test_util::conv2d_reference;
using test_util::random_tensor;
using test_util::tensor_of;

TEST_SUITE("conv") {

TEST_CASE("a 1x1x3x3 input with a fixed 2x2 kernel, worked by hand") {
    auto x = tensor_of<double>(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto k = tensor_of<double>(Shape{1, 1, 2, 2}, {1, 0, 0, -1});
    const auto y = conv2d(x, k, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    // each output is top-left minus bottom-right of its window
    CHECK(y.at(0, 0, 0, 0) == 1.0 - 5.0);
    CHECK(y.at(0, 0, 0, 1) == 2.0 - 6.0);
    CHECK(y.at(0, 0, 1, 0) == 4.0 - 8.0);
    CHECK(y.at(0, 0, 1, 1) == 5.0 - 9.0);
}

TEST_CASE("matches the four-loop reference on random shapes") {
    struct Case {
        Shape input, kernel;
        std::int64_t stride, pad;
    };
    const Case cases[] = {
        {Shape{2, 3, 8, 8}, Shape{4, 3, 3, 3}, 1, 1},
        {Shape{1, 1, 5, 5}, Shape{2, 1, 3, 3}, 2, 1},
        {Shape{3, 2, 6, 6}, Shape{2, 2, 2, 2}, 2, 0},
        {Shape{1, 4, 7, 7}, Shape{1, 4, 1, 1}, 1, 0},
        {Shape{2, 1, 4, 4}, Shape{3, 1, 4, 4}, 1, 0},
    };
    for (const auto& c : cases) {
        CAPTURE(c.input.str());
        CAPTURE(c.kernel.str());
        const auto x = random_tensor<double>(c.input, 11);
        const auto k = random_tensor<double>(c.kernel, 22);
        const auto got = conv2d(x, k, c.stride, c.pad);
        const auto want = conv2d_reference(x, k, c.stride, c.pad);
        REQUIRE(got.shape() == want.shape());
        CHECK(allclose(got, want, 1e-12, 1e-12));
    }
}

TEST_CASE("shape validation") {
    const auto x = random_tensor<double>(Shape{1, 2, 5, 5}, 1);
    CHECK_THROWS_AS(conv2d(x, random_tensor<double>(Shape{3, 1, 3, 3}, 2), 1, 1), ShapeError); // c_in mismatch
    CHECK_THROWS_AS(conv2d(x, random_tensor<double>(Shape{3, 2, 4, 4}, 2), 2, 0), ShapeError); // non-integral output
    CHECK_THROWS_AS(conv2d(x, random_tensor<double>(Shape{3, 2, 7, 7}, 2), 1, 0), ShapeError); // kernel larger than input
}

TEST_CASE("im2col column layout") {
    auto x = tensor_of<double>(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const auto cols = im2col(x, 2, 1, 0);
    REQUIRE(cols.shape() == Shape{4, 4});
    // first column is the top-left 2x2 window in row-major order
    CHECK(cols.at(0, 0) == 1.0);
    CHECK(cols.at(1, 0) == 2.0);
    CHECK(cols.at(2, 0) == 4.0);
    CHECK(cols.at(3, 0) == 5.0);
    // padding inserts zeros
    const auto padded = im2col(x, 2, 1, 1);
    CHECK(padded.at(0, 0) == 0.0);
}

TEST_CASE("col2im is the adjoint of im2col") {
    // <im2col(x), y> == <x, col2im(y)> must hold for the backward pass to be
    // a real transpose; random probes catch indexing mistakes immediately.
    const Shape in_shape{2, 2, 5, 5};
    const std::int64_t k = 3, stride = 2, pad = 1;
    const auto x = random_tensor<double>(in_shape, 31);
    const auto cols = im2col(x, k, stride, pad);
    const auto y = random_tensor<double>(cols.shape(), 32);

    double lhs = 0.0;
    const auto xc = im2col(x, k, stride, pad);
    for (std::uint64_t i = 0; i < xc.numel(); ++i) lhs += xc[i] * y[i];

    const auto back = col2im(y, in_shape, k, stride, pad);
    double rhs = 0.0;
    for (std::uint64_t i = 0; i < back.numel(); ++i) rhs += x[i] * back[i];

    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("unfold_conv_output inverts fold_conv_output") {
    const auto x = random_tensor<double>(Shape{2, 1, 4, 4}, 7);
    const auto kt = random_tensor<double>(Shape{3, 1, 3, 3}, 8);
    const auto y = conv2d(x, kt, 1, 0);
    const ConvDims d = conv_dims(x.shape(), 3, 1, 0);
    const auto unfolded = unfold_conv_output(y, d);
    REQUIRE(unfolded.shape() == Shape{3, 2 * 2 * 2});
    CHECK(unfolded.at(1, 0) == y.at(0, 1, 0, 0));
    CHECK(unfolded.at(2, 7) == y.at(1, 2, 1, 1));
    CHECK(fold_conv_output(unfolded, d, 3) == y);
}

TEST_CASE("float32 path agrees with the reference at its own precision") {
    const auto x = random_tensor<float>(Shape{2, 2, 6, 6}, 41);
    const auto k = random_tensor<float>(Shape{3, 2, 3, 3}, 42);
    const auto got = conv2d(x, k, 1, 1);
    const auto want = conv2d_reference(x, k, 1, 1);
    CHECK(allclose(got, want, 1e-5f, 1e-5f));
}

} // TEST_SUITE
