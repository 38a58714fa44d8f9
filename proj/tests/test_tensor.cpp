#include "doctest.h"

#include <cmath>

#include "liera/tensor.hpp"
#include "test_util.hpp"

using namespace liera;
using test_util::tensor_of;

TEST_SUITE("tensor") {

TEST_CASE("shape basics and bounds") {
    Shape s{2, 3};
    CHECK(s.rank() == 2);
    CHECK(s.numel() == 6);
    CHECK(s.dim(0) == 2);
    CHECK(s.str() == "(2,3)");

    CHECK(Shape{}.numel() == 1); // rank 0 scalar

    CHECK_THROWS_AS(Shape({2, 3, 4, 5, 6}), ShapeError);
    CHECK_THROWS_AS(Shape({2, -1}), ShapeError);
    CHECK_THROWS_AS(Shape({0, 3}), ShapeError);
}

TEST_CASE("default tensor is a scalar zero") {
    Tensor<double> t;
    CHECK(t.shape().rank() == 0);
    CHECK(t.numel() == 1);
    CHECK(t[0] == 0.0);
}

TEST_CASE("row-major layout") {
    auto t = tensor_of<double>(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.at(0, 2) == 3.0);
    CHECK(t.at(1, 0) == 4.0);

    Tensor<double> q(Shape{2, 2, 2, 2});
    q.at(1, 0, 1, 0) = 9.0;
    CHECK(q[static_cast<std::uint64_t>(1 * 8 + 0 * 4 + 1 * 2 + 0)] == 9.0);
}

TEST_CASE("elementwise arithmetic") {
    auto a = tensor_of<double>(Shape{2, 2}, {1, 2, 3, 4});
    auto b = tensor_of<double>(Shape{2, 2}, {10, 20, 30, 40});

    const auto sum = add(a, b);
    CHECK(sum[0] == 11.0);
    CHECK(sum[3] == 44.0);

    const auto diff = sub(b, a);
    CHECK(diff[0] == 9.0);

    const auto prod = hadamard(a, b);
    CHECK(prod[2] == 90.0);

    const auto half = scale(a, 0.5);
    CHECK(half[1] == 1.0);

    CHECK_THROWS_AS(add(a, tensor_of<double>(Shape{4}, {1, 2, 3, 4})), ShapeError);
}

TEST_CASE("exp and ln round trip") {
    auto a = tensor_of<double>(Shape{3}, {0.0, 1.0, -0.5});
    const auto e = map_exp(a);
    CHECK(e[0] == 1.0);
    CHECK(e[1] == doctest::Approx(2.718281828459045).epsilon(1e-15));

    const auto back = map_ln(e);
    for (int i = 0; i < 3; ++i) CHECK(back[static_cast<std::uint64_t>(i)] == doctest::Approx(a[static_cast<std::uint64_t>(i)]).epsilon(1e-15));

    // ln(2) against its known decimal expansion
    auto two = tensor_of<double>(Shape{1}, {2.0});
    CHECK(map_ln(two)[0] == doctest::Approx(0.6931471805599453).epsilon(1e-16));
}

TEST_CASE("reciprocal") {
    auto a = tensor_of<double>(Shape{2}, {4.0, -0.5});
    const auto r = reciprocal(a);
    CHECK(r[0] == 0.25);
    CHECK(r[1] == -2.0);

    auto z = tensor_of<double>(Shape{1}, {0.0});
    CHECK_THROWS_AS(reciprocal(z), NumericError);
}

TEST_CASE("matmul against a hand-worked product") {
    auto a = tensor_of<double>(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = tensor_of<double>(Shape{3, 2}, {7, 8, 9, 10, 11, 12});
    const auto c = matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 2});
    CHECK(c.at(0, 0) == 58.0);
    CHECK(c.at(0, 1) == 64.0);
    CHECK(c.at(1, 0) == 139.0);
    CHECK(c.at(1, 1) == 154.0);

    CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("transpose and reshape") {
    auto a = tensor_of<double>(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    const auto t = transpose(a);
    REQUIRE(t.shape() == Shape{3, 2});
    CHECK(t.at(0, 1) == 4.0);
    CHECK(t.at(2, 0) == 3.0);

    const auto r = reshape(a, Shape{3, 2});
    CHECK(r.at(0, 1) == 2.0); // reshape keeps the flat order, transpose does not
    CHECK_THROWS_AS(reshape(a, Shape{4, 2}), ShapeError);
}

TEST_CASE("kernel flatten round trip") {
    const Shape ks{3, 2, 2, 2};
    auto k = test_util::random_tensor<double>(ks, 99);
    const auto flat = flatten_kernel(k);
    REQUIRE(flat.shape() == Shape{3, 8});
    CHECK(flat.at(1, 0) == k.at(1, 0, 0, 0));
    CHECK(flat.at(2, 7) == k.at(2, 1, 1, 1));

    const auto back = unflatten_kernel(flat, ks);
    CHECK(back == k);
}

TEST_CASE("reductions") {
    auto a = tensor_of<double>(Shape{2, 2}, {3, -4, 0, 1});
    CHECK(frobenius_norm(a) == doctest::Approx(std::sqrt(26.0)).epsilon(1e-15));
    CHECK(max_abs(a) == 4.0);
    CHECK(min_abs(a) == 0.0);
    CHECK(sum_all(a) == 0.0);
}

TEST_CASE("allclose tolerances") {
    auto a = tensor_of<double>(Shape{2}, {1.0, 100.0});
    auto b = tensor_of<double>(Shape{2}, {1.0 + 1e-12, 100.0 + 1e-10});
    CHECK(allclose(a, b, 1e-11, 1e-11));
    CHECK_FALSE(allclose(a, b, 0.0, 1e-13));
}

TEST_CASE("non-finite values are rejected at op boundaries") {
    auto a = tensor_of<double>(Shape{2}, {1.0, 2.0});
    auto big = tensor_of<double>(Shape{2}, {1e308, 1e308});
    CHECK_THROWS_AS(add(big, big), NumericError);

    // the error names the operation and the offending position
    try {
        add(big, big);
    } catch (const NumericError& e) {
        const std::string what = e.what();
        CHECK(what.find("add") != std::string::npos);
        CHECK(what.find("non-finite") != std::string::npos);
        CHECK(what.find("(0)") != std::string::npos);
    }
    CHECK_NOTHROW(add(a, a));
}

TEST_CASE("float32 membership epsilon is looser than float64") {
    CHECK(membership_eps<float>() == doctest::Approx(1e-6f));
    CHECK(membership_eps<double>() == doctest::Approx(1e-12));
}

TEST_CASE("dtype tags") {
    CHECK(Tensor<float>::dtype() == DType::F32);
    CHECK(Tensor<double>::dtype() == DType::F64);
    CHECK(std::string(dtype_name(DType::F32)) == "f32");
    CHECK(std::string(dtype_name(DType::F64)) == "f64");
}

} // TEST_SUITE
