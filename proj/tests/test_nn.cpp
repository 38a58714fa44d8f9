#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "liera/nn.hpp"
#include "liera/rng.hpp"
#include "test_util.hpp"

using namespace liera;
using test_util::random_tensor;
using test_util::TempDir;

namespace {

template <typename S>
std::vector<std::string> registry_names(const nn::Model<S>& m) {
    std::vector<std::string> names;
    for (const auto& p : nn::registry(m)) names.push_back(p.name);
    return names;
}

} // namespace

TEST_SUITE("nn") {

TEST_CASE("mlp construction") {
    Rng rng(1);
    auto m = nn::build_mlp<double>(4, rng);
    REQUIRE(m.layers.size() == 2);
    CHECK(m.layers[0].weight.shape() == Shape{32, 64});
    CHECK(m.layers[1].weight.shape() == Shape{4, 32});
    CHECK(m.layers[0].bias.has_value());
    CHECK(registry_names(m) ==
          std::vector<std::string>{"linear1.W", "linear1.bias", "linear2.W", "linear2.bias"});
    CHECK(nn::total_param_count(m) == 32 * 64 + 32 + 4 * 32 + 4);

    Rng rng2(1);
    CHECK_THROWS_AS(nn::build_mlp<double>(1, rng2), ConfigError);
}

TEST_CASE("small cnn construction") {
    Rng rng(2);
    auto m = nn::build_smallcnn<double>(4, rng);
    REQUIRE(m.layers.size() == 3);
    CHECK(m.layers[0].weight.shape() == Shape{8, 1, 3, 3});
    CHECK(m.layers[0].pad == 1);
    CHECK_FALSE(m.layers[0].bias.has_value());
    CHECK(m.layers[1].weight.shape() == Shape{8, 8, 3, 3});
    CHECK(m.layers[2].weight.shape() == Shape{4, 512});
    CHECK(registry_names(m) ==
          std::vector<std::string>{"conv1.kernel", "conv2.kernel", "linear1.W", "linear1.bias"});

    CHECK(m.layer("conv2").is_conv);
    CHECK_THROWS_AS(m.layer("conv9"), ConfigError);
}

TEST_CASE("mlp forward matches a hand-rolled pass") {
    Rng rng(3);
    auto m = nn::build_mlp<double>(3, rng);
    const auto batch = random_tensor<double>(Shape{5, 1, 8, 8}, 33);
    const auto logits = nn::predict_logits(m, batch);
    REQUIRE(logits.shape() == Shape{5, 3});

    const auto x = reshape(batch, Shape{5, 64});
    auto h = matmul(x, transpose(m.layers[0].weight));
    for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t j = 0; j < 32; ++j) {
            h.at(i, j) += m.layers[0].bias->at(j);
            h.at(i, j) = std::max(0.0, h.at(i, j));
        }
    auto want = matmul(h, transpose(m.layers[1].weight));
    for (std::int64_t i = 0; i < 5; ++i)
        for (std::int64_t j = 0; j < 3; ++j) want.at(i, j) += m.layers[1].bias->at(j);

    CHECK(allclose(logits, want, 1e-12, 1e-14));
    // final layer emits raw logits, so some should be negative
    bool any_negative = false;
    for (std::uint64_t i = 0; i < logits.numel(); ++i) any_negative = any_negative || logits[i] < 0.0;
    CHECK(any_negative);
}

TEST_CASE("cnn forward shape and determinism") {
    Rng rng(4);
    auto m = nn::build_smallcnn<double>(4, rng);
    const auto batch = random_tensor<double>(Shape{2, 1, 8, 8}, 44);
    const auto a = nn::predict_logits(m, batch);
    const auto b = nn::predict_logits(m, batch);
    CHECK(a.shape() == Shape{2, 4});
    CHECK(a == b);
}

TEST_CASE("glob and selector matching") {
    CHECK(nn::glob_match("conv*", "conv1"));
    CHECK(nn::glob_match("*", "anything.at.all"));
    CHECK(nn::glob_match("?onv1", "conv1"));
    CHECK(nn::glob_match("*.W", "linear1.W"));
    CHECK(nn::glob_match("c*1", "conv1"));
    CHECK_FALSE(nn::glob_match("conv", "conv1"));
    CHECK_FALSE(nn::glob_match("?", "ab"));
    CHECK_FALSE(nn::glob_match("", "x"));

    CHECK(nn::selector_match("conv*,linear*", "conv2"));
    CHECK(nn::selector_match("conv*,linear*", "linear1"));
    CHECK_FALSE(nn::selector_match("conv*,linear*", "head"));
    CHECK_FALSE(nn::selector_match("", "conv1"));
}

TEST_CASE("attach freezes the base and respects the selector") {
    Rng rng(5);
    auto m = nn::build_smallcnn<double>(4, rng);
    peft::AdapterConfig cfg;
    cfg.rank = 2;
    cfg.target = "linear*";
    Rng arng(6);
    const auto rep = nn::attach_adapters(m, cfg, arng);
    CHECK(rep.attached == std::vector<std::string>{"linear1"});
    CHECK(rep.warnings.empty());

    for (const auto& l : m.layers) CHECK(l.frozen);
    CHECK_FALSE(m.layer("conv1").adapter.has_value());
    REQUIRE(m.layer("linear1").adapter.has_value());
    CHECK(m.layer("linear1").adapter->factors.A.shape() == Shape{4, 2});
    CHECK(m.layer("linear1").adapter->factors.B.shape() == Shape{2, 512});
    CHECK(nn::trainable_param_count(m) == 4 * 2 + 2 * 512);

    // registry now carries the factor entries
    const auto names = registry_names(m);
    CHECK(std::find(names.begin(), names.end(), "linear1.A") != names.end());
    CHECK(std::find(names.begin(), names.end(), "linear1.B") != names.end());

    // a second attach on the same layer is an error
    Rng arng2(7);
    CHECK_THROWS_AS(nn::attach_adapters(m, cfg, arng2), ConfigError);
}

TEST_CASE("attach everywhere gives the expected trainable budget") {
    Rng rng(8);
    auto m = nn::build_smallcnn<double>(4, rng);
    peft::AdapterConfig cfg;
    cfg.rank = 2;
    cfg.target = "conv*,linear*";
    Rng arng(9);
    nn::attach_adapters(m, cfg, arng);
    // conv1: 2*(8+9)=34, conv2: 2*(8+72)=160, linear1: 2*(4+512)=1032
    CHECK(nn::trainable_param_count(m) == 1226);

    const auto shapes = nn::adapted_layer_shapes(m);
    REQUIRE(shapes.size() == 3);
    const auto budget = peft::budget_table(shapes, cfg.rank);
    CHECK(budget.trainable_total == 1226);
    CHECK(budget.full_total == nn::total_param_count(m) - 4); // bias is not adapter-targeted

    nn::detach_adapters(m);
    CHECK_FALSE(m.layer("conv1").adapter.has_value());
}

TEST_CASE("selector matching nothing is a config error") {
    Rng rng(10);
    auto m = nn::build_mlp<double>(4, rng);
    peft::AdapterConfig cfg;
    cfg.target = "conv*";
    Rng arng(11);
    CHECK_THROWS_AS(nn::attach_adapters(m, cfg, arng), ConfigError);
}

TEST_CASE("a zero entry in the base weight is reported, not clamped") {
    Rng rng(12);
    auto m = nn::build_mlp<double>(4, rng);
    m.layer("linear1").weight.at(0, 0) = 0.0;
    peft::AdapterConfig cfg;
    cfg.target = "linear1";
    Rng arng(13);
    const auto rep = nn::attach_adapters(m, cfg, arng);
    REQUIRE(rep.warnings.size() == 1);
    CHECK(rep.warnings[0].find("linear1") != std::string::npos);
    CHECK(m.layer("linear1").adapter->base.at(0, 0) == 0.0);
}

TEST_CASE("training with adapters never touches the base weights") {
    Rng rng(14);
    auto m = nn::build_smallcnn<double>(3, rng);
    peft::AdapterConfig cfg;
    cfg.rank = 2;
    cfg.target = "conv*,linear*";
    Rng arng(15);
    nn::attach_adapters(m, cfg, arng);

    const auto w0 = m.layer("conv1").weight;
    const auto base0 = m.layer("conv1").adapter->base;

    // one crude gradient step applied through the update path
    const auto batch = random_tensor<double>(Shape{4, 1, 8, 8}, 50);
    autograd::Tape<double> tape;
    const auto fr = nn::model_forward(m, tape, batch, false);
    const auto gm = tape.backward(tape.softmax_xent(fr.logits, {0, 1, 2, 0}));

    std::vector<std::pair<std::string, Tensor<double>>> updates;
    for (const auto& [name, id] : fr.trainables) {
        CHECK((name.size() > 2 && (name.substr(name.size() - 2) == ".A" || name.substr(name.size() - 2) == ".B")));
        auto next = tape.val(id);
        const auto& g = gm.at(id.index);
        for (std::uint64_t i = 0; i < next.numel(); ++i) next[i] -= 0.1 * g[i];
        updates.emplace_back(name, std::move(next));
    }
    nn::apply_updates(m, updates);

    CHECK(m.layer("conv1").weight == w0);
    CHECK(m.layer("conv1").adapter->base == base0);
    // at least one factor moved
    CHECK(max_abs(m.layer("linear1").adapter->factors.B) > 0.0);
}

TEST_CASE("merged adapters predict the same logits") {
    Rng rng(16);
    auto m = nn::build_smallcnn<double>(3, rng);
    peft::AdapterConfig cfg;
    cfg.rank = 2;
    cfg.target = "conv*,linear*";
    cfg.lift_mode = peft::LiftMode::LieExact;
    Rng arng(17);
    nn::attach_adapters(m, cfg, arng);
    for (auto& l : m.layers) {
        auto& f = l.adapter->factors;
        f.B = random_tensor<double>(f.B.shape(), 60 + static_cast<std::uint64_t>(f.B.numel()), 0.05);
    }

    const auto batch = random_tensor<double>(Shape{3, 1, 8, 8}, 61);
    const auto before = nn::predict_logits(m, batch);
    for (auto& l : m.layers) peft::merge(*l.adapter);
    const auto after = nn::predict_logits(m, batch);
    CHECK(allclose(before, after, 1e-12, 1e-14));
}

TEST_CASE("base training exposes weights and biases as trainables") {
    Rng rng(18);
    auto m = nn::build_mlp<double>(3, rng);
    const auto batch = random_tensor<double>(Shape{2, 1, 8, 8}, 62);
    autograd::Tape<double> tape;
    const auto fr = nn::model_forward(m, tape, batch, true);
    std::vector<std::string> names;
    for (const auto& [name, id] : fr.trainables) names.push_back(name);
    CHECK(names == std::vector<std::string>{"linear1.W", "linear1.bias", "linear2.W", "linear2.bias"});

    nn::freeze_all_base(m);
    autograd::Tape<double> tape2;
    const auto fr2 = nn::model_forward(m, tape2, batch, true);
    CHECK(fr2.trainables.empty());
}

TEST_CASE("apply_updates rejects malformed names and shapes") {
    Rng rng(19);
    auto m = nn::build_smallcnn<double>(3, rng);
    CHECK_THROWS_AS(nn::apply_updates(m, {{"noseparator", zeros<double>(Shape{1})}}), ConfigError);
    CHECK_THROWS_AS(nn::apply_updates(m, {{"conv1.bias", zeros<double>(Shape{8})}}), ConfigError);
    CHECK_THROWS_AS(nn::apply_updates(m, {{"conv1.huh", zeros<double>(Shape{8})}}), ConfigError);
    CHECK_THROWS_AS(nn::apply_updates(m, {{"conv1.kernel", zeros<double>(Shape{8, 1, 2, 2})}}), ShapeError);
    CHECK_NOTHROW(nn::apply_updates(m, {{"conv1.kernel", zeros<double>(Shape{8, 1, 3, 3})}}));
    CHECK(max_abs(m.layer("conv1").weight) == 0.0);
}

TEST_CASE("checkpoint round trip, plain model") {
    TempDir dir("ckpt");
    Rng rng(20);
    auto m = nn::build_smallcnn<double>(4, rng);
    const auto path = (dir.path / "model.lckp").string();
    nn::save_checkpoint(m, path);
    auto back = nn::load_checkpoint<double>(path);
    CHECK(back.arch == nn::Arch::SmallCnn);
    CHECK(back.n_classes == 4);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        CHECK(back.layers[i].weight == m.layers[i].weight);
        CHECK(back.layers[i].bias.has_value() == m.layers[i].bias.has_value());
        if (m.layers[i].bias) CHECK(*back.layers[i].bias == *m.layers[i].bias);
    }
    CHECK_THROWS_AS(nn::load_checkpoint<float>(path), IoError); // dtype mismatch
}

TEST_CASE("checkpoint round trip, adapters attached") {
    TempDir dir("ckpt_ad");
    Rng rng(21);
    auto m = nn::build_smallcnn<double>(4, rng);
    peft::AdapterConfig cfg;
    cfg.rank = 2;
    cfg.alpha = 16.0;
    cfg.lift_mode = peft::LiftMode::LieTaylor;
    cfg.target = "conv*,linear*";
    Rng arng(22);
    nn::attach_adapters(m, cfg, arng);
    m.layer("conv2").adapter->factors.B = random_tensor<double>(Shape{2, 72}, 63, 0.05);

    const auto path = (dir.path / "adapted.lckp").string();
    nn::save_checkpoint(m, path);
    auto back = nn::load_checkpoint<double>(path);

    REQUIRE(back.layer("conv2").adapter.has_value());
    const auto& ad = *back.layer("conv2").adapter;
    CHECK(ad.factors.A == m.layer("conv2").adapter->factors.A);
    CHECK(ad.factors.B == m.layer("conv2").adapter->factors.B);
    CHECK(ad.base == m.layer("conv2").adapter->base);
    CHECK(ad.config.lift_mode == peft::LiftMode::LieTaylor);
    CHECK(ad.config.alpha == 16.0);
    CHECK_FALSE(ad.merged);
    CHECK(back.layer("conv2").frozen);

    // predictions survive the round trip bit for bit
    const auto batch = random_tensor<double>(Shape{2, 1, 8, 8}, 64);
    CHECK(nn::predict_logits(m, batch) == nn::predict_logits(back, batch));
}

} // TEST_SUITE
