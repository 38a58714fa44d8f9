#include "doctest.h"

#include <cmath>
#include <utility>
#include <vector>

#include "liera/peft.hpp"
#include "liera/rng.hpp"
#include "test_util.hpp"

using namespace liera;
using test_util::random_tensor;
using test_util::tensor_of;

namespace {

// Hand-assembled adapter with explicit factor values, no init involved.
peft::AttachedAdapter<double> make_adapter(Tensor<double> base, Tensor<double> A, Tensor<double> B,
                                           double alpha, peft::LiftMode mode) {
    peft::AttachedAdapter<double> ad;
    ad.base = std::move(base);
    ad.factors.A = std::move(A);
    ad.factors.B = std::move(B);
    ad.factors.alpha = alpha;
    ad.factors.rank = ad.factors.A.shape().dim(1);
    ad.config.rank = ad.factors.rank;
    ad.config.alpha = alpha;
    ad.config.lift_mode = mode;
    return ad;
}

} // namespace

TEST_SUITE("peft") {

TEST_CASE("lift mode names round trip and unknown names are rejected") {
    CHECK(peft::parse_lift_mode("additive") == peft::LiftMode::Additive);
    CHECK(peft::parse_lift_mode("lie_exact") == peft::LiftMode::LieExact);
    CHECK(peft::parse_lift_mode("lie_taylor") == peft::LiftMode::LieTaylor);
    for (const auto m : {peft::LiftMode::Additive, peft::LiftMode::LieExact, peft::LiftMode::LieTaylor})
        CHECK(peft::parse_lift_mode(peft::lift_mode_name(m)) == m);
    CHECK_THROWS_AS(peft::parse_lift_mode("lora"), ConfigError);
}

TEST_CASE("adapter config validation") {
    peft::AdapterConfig c;
    CHECK_NOTHROW(c.validate());
    c.rank = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.rank = 2;
    c.alpha = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.alpha = 4.0;
    c.init_stddev = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.init_stddev = 0.02;
    c.target = "";
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("factor init: A gaussian, B zero, rank bounds enforced") {
    Rng rng(404);
    const auto f = peft::init_factors<double>(40, 30, 20, 8.0, 0.02, rng);
    CHECK(f.A.shape() == Shape{40, 20});
    CHECK(f.B.shape() == Shape{20, 30});
    CHECK(f.scaling() == doctest::Approx(0.4)); // 8 / 20

    for (std::uint64_t i = 0; i < f.B.numel(); ++i) CHECK(f.B[i] == 0.0);

    // 800 draws: sample moments should sit near N(0, 0.02^2)
    double mean = 0.0;
    for (std::uint64_t i = 0; i < f.A.numel(); ++i) mean += f.A[i];
    mean /= static_cast<double>(f.A.numel());
    CHECK(std::abs(mean) < 0.002);
    double var = 0.0;
    for (std::uint64_t i = 0; i < f.A.numel(); ++i) var += (f.A[i] - mean) * (f.A[i] - mean);
    var /= static_cast<double>(f.A.numel() - 1);
    CHECK(std::sqrt(var) == doctest::Approx(0.02).epsilon(0.10));

    Rng rng2(1);
    CHECK_THROWS_AS(peft::init_factors<double>(4, 3, 0, 1.0, 0.02, rng2), ShapeError);
    CHECK_THROWS_AS(peft::init_factors<double>(4, 3, 4, 1.0, 0.02, rng2), ShapeError);
}

TEST_CASE("freshly initialized adapters leave the weight bit-identical") {
    Rng rng(7);
    const auto base_mat = random_tensor<double>(Shape{5, 4}, 70);
    const auto base_ker = random_tensor<double>(Shape{3, 2, 3, 3}, 71);

    for (const auto mode : {peft::LiftMode::Additive, peft::LiftMode::LieExact, peft::LiftMode::LieTaylor}) {
        CAPTURE(peft::lift_mode_name(mode));

        peft::AttachedAdapter<double> lin;
        lin.base = base_mat;
        lin.factors = peft::init_factors<double>(5, 4, 2, 4.0, 0.02, rng);
        lin.config.lift_mode = mode;
        CHECK(peft::effective_weight(lin) == base_mat);

        peft::AttachedAdapter<double> conv;
        conv.base = base_ker;
        conv.factors = peft::init_factors<double>(3, 2 * 3 * 3, 2, 4.0, 0.02, rng);
        conv.config.lift_mode = mode;
        CHECK(peft::effective_weight(conv) == base_ker);
    }
}

TEST_CASE("delta is alpha over rank times A B") {
    // A = [[1],[2]], B = [[3, 4, 5]], alpha = 6, rank = 1: scaling 6
    const auto A = tensor_of<double>(Shape{2, 1}, {1.0, 2.0});
    const auto B = tensor_of<double>(Shape{1, 3}, {3.0, 4.0, 5.0});
    peft::LowRankFactors<double> f{A, B, 6.0, 1};
    const auto d = peft::delta_matrix(f);
    CHECK(d == tensor_of<double>(Shape{2, 3}, {18.0, 24.0, 30.0, 36.0, 48.0, 60.0}));
}

TEST_CASE("kernel delta reshapes the flattened matrix into the kernel") {
    const Shape kshape{2, 1, 2, 2}; // flattens to (2, 4)
    const auto A = tensor_of<double>(Shape{2, 1}, {1.0, -1.0});
    const auto B = tensor_of<double>(Shape{1, 4}, {1.0, 2.0, 3.0, 4.0});
    peft::LowRankFactors<double> f{A, B, 1.0, 1};
    const auto d = peft::delta_for_kernel(f, kshape);
    CHECK(d.shape() == kshape);
    CHECK(d.at(0, 0, 0, 0) == 1.0);
    CHECK(d.at(0, 0, 1, 1) == 4.0);
    CHECK(d.at(1, 0, 0, 1) == -2.0);

    CHECK_THROWS_AS(peft::delta_for_kernel(f, Shape{3, 1, 2, 2}), ShapeError);
    CHECK_THROWS_AS(peft::delta_for_kernel(f, Shape{2, 4}), ShapeError);
}

TEST_CASE("the three lifts implement their formulas") {
    const auto w = tensor_of<double>(Shape{2, 2}, {1.0, -2.0, 0.5, 4.0});
    const auto d = tensor_of<double>(Shape{2, 2}, {0.1, 0.2, -0.3, 0.0});

    const auto additive = peft::lift(w, d, peft::LiftMode::Additive);
    CHECK(additive == add(w, d));

    const auto exact = peft::lift(w, d, peft::LiftMode::LieExact);
    for (std::uint64_t i = 0; i < 4; ++i)
        CHECK(exact[i] == doctest::Approx(w[i] * std::exp(d[i])).epsilon(1e-15));

    const auto taylor = peft::lift(w, d, peft::LiftMode::LieTaylor);
    for (std::uint64_t i = 0; i < 4; ++i)
        CHECK(taylor[i] == doctest::Approx(w[i] * (1.0 + d[i])).epsilon(1e-15));

    CHECK_THROWS_AS(peft::lift(w, tensor_of<double>(Shape{2}, {0.0, 0.0}), peft::LiftMode::Additive),
                    ShapeError);
}

TEST_CASE("merge folds the delta into the base and unmerge restores it") {
    const auto base = tensor_of<double>(Shape{2, 2}, {1.0, -2.0, 0.5, 4.0});
    const auto A = tensor_of<double>(Shape{2, 1}, {0.3, -0.1});
    const auto B = tensor_of<double>(Shape{1, 2}, {0.2, 0.4});

    for (const auto mode : {peft::LiftMode::Additive, peft::LiftMode::LieExact, peft::LiftMode::LieTaylor}) {
        CAPTURE(peft::lift_mode_name(mode));
        auto ad = make_adapter(base, A, B, 2.0, mode);
        const auto before = peft::effective_weight(ad);

        peft::merge(ad);
        CHECK(ad.merged);
        CHECK(ad.base == before);
        CHECK(peft::effective_weight(ad) == before); // merged: no second application
        CHECK_THROWS_AS(peft::merge(ad), NumericError);

        peft::unmerge(ad);
        CHECK_FALSE(ad.merged);
        CHECK(allclose(ad.base, base, 1e-14, 1e-16));
        CHECK_THROWS_AS(peft::unmerge(ad), NumericError);
    }
}

TEST_CASE("first-order unmerge refuses a non-invertible fold") {
    // delta = -1 everywhere: merge zeroes the base and 1 + delta has no
    // reciprocal, so unmerge must report the failure instead of dividing.
    const auto base = tensor_of<double>(Shape{1, 1}, {3.0});
    auto ad = make_adapter(base, tensor_of<double>(Shape{1, 1}, {1.0}),
                           tensor_of<double>(Shape{1, 1}, {-1.0}), 1.0, peft::LiftMode::LieTaylor);
    peft::merge(ad);
    CHECK(ad.base[0] == 0.0);
    CHECK_THROWS_AS(peft::unmerge(ad), NumericError);
}

TEST_CASE("adapter forward matches a plain matmul against the lifted weight") {
    const auto base = random_tensor<double>(Shape{3, 4}, 80);
    const auto A = random_tensor<double>(Shape{3, 2}, 81, 0.1);
    const auto B = random_tensor<double>(Shape{2, 4}, 82, 0.1);
    const auto ad = make_adapter(base, A, B, 4.0, peft::LiftMode::LieExact);

    const auto x = random_tensor<double>(Shape{4, 5}, 83);
    CHECK(peft::forward_linear(ad, x) == matmul(peft::effective_weight(ad), x));

    const auto xv = random_tensor<double>(Shape{4}, 84);
    const auto yv = peft::forward_linear(ad, xv);
    CHECK(yv.shape() == Shape{3});
    const auto ym = matmul(peft::effective_weight(ad), reshape(xv, Shape{4, 1}));
    for (int i = 0; i < 3; ++i) CHECK(yv[static_cast<std::uint64_t>(i)] == ym.at(i, 0));

    const auto bias = tensor_of<double>(Shape{3}, {1.0, 2.0, 3.0});
    const auto yb = peft::forward_linear(ad, xv, &bias);
    for (int i = 0; i < 3; ++i)
        CHECK(yb[static_cast<std::uint64_t>(i)] == doctest::Approx(ym.at(i, 0) + bias.at(i)));

    const auto bad_bias = tensor_of<double>(Shape{2}, {0.0, 0.0});
    CHECK_THROWS_AS(peft::forward_linear(ad, xv, &bad_bias), ShapeError);
}

TEST_CASE("adapter conv forward matches conv2d against the lifted kernel") {
    const auto base = random_tensor<double>(Shape{2, 3, 3, 3}, 90);
    const auto A = random_tensor<double>(Shape{2, 2}, 91, 0.05);
    const auto B = random_tensor<double>(Shape{2, 27}, 92, 0.05);
    const auto ad = make_adapter(base, A, B, 4.0, peft::LiftMode::LieTaylor);

    const auto x = random_tensor<double>(Shape{2, 3, 6, 6}, 93);
    CHECK(peft::forward_conv(ad, x, 1, 1) == conv2d(x, peft::effective_weight(ad), 1, 1));
}

TEST_CASE("taped lift reproduces the plain lift and trains only the factors") {
    const auto base = random_tensor<double>(Shape{2, 6}, 100);
    const auto A = random_tensor<double>(Shape{2, 2}, 101, 0.2);
    const auto B = random_tensor<double>(Shape{2, 6}, 102, 0.2);

    for (const auto mode : {peft::LiftMode::Additive, peft::LiftMode::LieExact, peft::LiftMode::LieTaylor}) {
        CAPTURE(peft::lift_mode_name(mode));
        const auto ad = make_adapter(base, A, B, 4.0, mode);

        autograd::Tape<double> tape;
        const auto base_v = tape.var_input(base);
        const auto a_v = tape.var_param(A);
        const auto b_v = tape.var_param(B);
        const auto out = peft::lift_on_tape(tape, base_v, a_v, b_v, ad);

        CHECK(allclose(tape.val(out), peft::effective_weight(ad), 1e-14, 0.0));

        const auto gm = tape.backward(tape.sum(out));
        CHECK(gm.count(base_v.index) == 0); // frozen input, no gradient entry
        CHECK(max_abs(gm.at(a_v.index)) > 0.0);
        CHECK(max_abs(gm.at(b_v.index)) > 0.0);
    }
}

TEST_CASE("taped kernel lift reshapes the delta onto the kernel") {
    const auto base = random_tensor<double>(Shape{2, 1, 2, 2}, 110);
    const auto A = random_tensor<double>(Shape{2, 1}, 111, 0.2);
    const auto B = random_tensor<double>(Shape{1, 4}, 112, 0.2);
    const auto ad = make_adapter(base, A, B, 2.0, peft::LiftMode::LieExact);

    autograd::Tape<double> tape;
    const auto out = peft::lift_on_tape(tape, tape.var_input(base), tape.var_param(A), tape.var_param(B), ad);
    CHECK(tape.val(out).shape() == base.shape());
    CHECK(allclose(tape.val(out), peft::effective_weight(ad), 1e-14, 0.0));
}

TEST_CASE("taped exact lift trips the overflow guard on runaway deltas") {
    const auto base = tensor_of<double>(Shape{1, 1}, {1.0});
    const auto ad = make_adapter(base, tensor_of<double>(Shape{1, 1}, {30.0}),
                                 tensor_of<double>(Shape{1, 1}, {30.0}), 1.0, peft::LiftMode::LieExact);
    autograd::Tape<double> tape;
    const auto base_v = tape.var_input(base);
    const auto a_v = tape.var_param(ad.factors.A);
    const auto b_v = tape.var_param(ad.factors.B);
    CHECK_THROWS_AS(peft::lift_on_tape(tape, base_v, a_v, b_v, ad), NumericError);
}

TEST_CASE("trainable parameter counts") {
    CHECK(peft::trainable_param_count(Shape{8, 4, 3, 3}, 2) == 88); // 2 * (8 + 36)
    CHECK(peft::trainable_param_count(Shape{10, 7}, 3) == 51);     // 3 * (10 + 7)
    CHECK_THROWS_AS(peft::trainable_param_count(Shape{5}, 1), ShapeError);
}

TEST_CASE("budget table totals and compression ratio") {
    const std::vector<std::pair<std::string, Shape>> layers{
        {"conv1.kernel", Shape{8, 4, 3, 3}},
        {"head.W", Shape{10, 7}},
    };
    const auto t = peft::budget_table(layers, 2);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].trainable == 88);
    CHECK(t.rows[0].full == 288);
    CHECK(t.rows[1].trainable == 34);
    CHECK(t.rows[1].full == 70);
    CHECK(t.trainable_total == 122);
    CHECK(t.full_total == 358);
    CHECK(t.ratio == doctest::Approx(122.0 / 358.0));
}

} // TEST_SUITE
