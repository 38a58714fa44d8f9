#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "liera/io.hpp"
#include "liera/rng.hpp"
#include "test_util.hpp"

using namespace liera;
using test_util::TempDir;
using test_util::random_tensor;

namespace {

io::Bytes slurp(const std::filesystem::path& p) { return io::read_file(p); }

} // namespace

TEST_SUITE("io") {

TEST_CASE("tensor file round trip is bit-exact") {
    TempDir dir("lten");
    const auto t = random_tensor<double>(Shape{3, 4, 2, 2}, 77);
    const auto path = dir.path / "t.lten";
    io::save_lten(path, t);
    const auto back = io::load_lten<double>(path);
    CHECK(back == t);

    // a second save writes the identical byte stream
    const auto first = slurp(path);
    io::save_lten(path, t);
    CHECK(slurp(path) == first);
}

TEST_CASE("float32 tensors round trip too") {
    TempDir dir("lten32");
    const auto t = random_tensor<float>(Shape{5}, 3);
    const auto path = dir.path / "t.lten";
    io::save_lten(path, t);
    CHECK(io::load_lten<float>(path) == t);
    CHECK(io::peek_lten_dtype(path) == DType::F32);
}

TEST_CASE("loading with the wrong scalar type fails") {
    TempDir dir("dtype");
    const auto path = dir.path / "t.lten";
    io::save_lten(path, random_tensor<double>(Shape{2, 2}, 4));
    CHECK_THROWS_AS(io::load_lten<float>(path), IoError);
}

TEST_CASE("corrupt headers are rejected") {
    TempDir dir("corrupt");
    const auto path = dir.path / "t.lten";
    io::save_lten(path, random_tensor<double>(Shape{2, 2}, 4));

    auto bytes = slurp(path);
    SUBCASE("bad magic") {
        bytes[0] ^= 0xFF;
        io::atomic_write_file(path, bytes);
        CHECK_THROWS_AS(io::load_lten<double>(path), IoError);
    }
    SUBCASE("truncated payload") {
        bytes.resize(bytes.size() - 3);
        io::atomic_write_file(path, bytes);
        CHECK_THROWS_AS(io::load_lten<double>(path), IoError);
    }
    SUBCASE("trailing garbage") {
        bytes.push_back(0);
        io::atomic_write_file(path, bytes);
        CHECK_THROWS_AS(io::load_lten<double>(path), IoError);
    }
    SUBCASE("unknown version") {
        bytes[4] = 9;
        io::atomic_write_file(path, bytes);
        CHECK_THROWS_AS(io::load_lten<double>(path), IoError);
    }
}

TEST_CASE("checkpoint containers hold tensors and text side by side") {
    TempDir dir("lckp");
    const auto path = dir.path / "c.lckp";

    io::Lckp ck;
    const auto w = random_tensor<double>(Shape{4, 3}, 10);
    const auto b = random_tensor<double>(Shape{4}, 11);
    ck.put_tensor("layer.W", w);
    ck.put_tensor("layer.bias", b);
    ck.put_text("meta.json", "{\"arch\":\"mlp\"}");
    ck.save(path);

    const io::Lckp back = io::Lckp::load(path);
    CHECK(back.has("layer.W"));
    CHECK(back.has("meta.json"));
    CHECK_FALSE(back.has("missing"));
    CHECK(back.get_tensor<double>("layer.W") == w);
    CHECK(back.get_tensor<double>("layer.bias") == b);
    CHECK(back.get_text("meta.json") == "{\"arch\":\"mlp\"}");
    CHECK(back.entries().size() == 3);

    CHECK_THROWS_AS(back.get_tensor<double>("missing"), IoError);

    // byte-exact on rewrite
    const auto first = slurp(path);
    back.save(path);
    CHECK(slurp(path) == first);
}

TEST_CASE("re-putting a name replaces its payload") {
    io::Lckp ck;
    ck.put_text("a", "1");
    ck.put_text("a", "22");
    CHECK(ck.entries().size() == 1);
    CHECK(ck.get_text("a") == "22");
}

TEST_CASE("atomic writes leave no temp files behind") {
    TempDir dir("atomic");
    const auto path = dir.path / "x.bin";
    io::atomic_write_text(path, "hello");
    int files = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir.path)) {
        (void)e;
        ++files;
    }
    CHECK(files == 1);
    CHECK(slurp(path) == io::Bytes{'h', 'e', 'l', 'l', 'o'});

    // overwrite replaces content
    io::atomic_write_text(path, "bye");
    CHECK(slurp(path).size() == 3);
}

TEST_CASE("reading a missing file reports an io error") {
    CHECK_THROWS_AS(io::read_file("/nonexistent/liera/nope.bin"), IoError);
    CHECK_THROWS_AS(io::Lckp::load("/nonexistent/liera/nope.lckp"), IoError);
}

} // TEST_SUITE
