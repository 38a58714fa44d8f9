#pragma once

// Synthetic classification tasks. Every sample is a pure function of
// (task spec, sample index), so datasets are bit-identical across runs and
// platforms. Transfer tasks reuse a base generator and stack transforms on
// top; the transformed distribution is what adapters must absorb.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "liera/io.hpp"
#include "liera/rng.hpp"
#include "liera/tensor.hpp"

#include "json.hpp"

namespace liera::data {

enum class Generator { Blobs, Bars };

inline const char* generator_name(Generator g) { return g == Generator::Blobs ? "blobs" : "bars"; }

inline Generator parse_generator(const std::string& s) {
    if (s == "blobs") return Generator::Blobs;
    if (s == "bars") return Generator::Bars;
    throw ConfigError("unknown generator \"" + s + "\" (expected blobs or bars)");
}

struct Transform {
    enum class Kind { None, Shift, Rotate90, Noise };
    Kind kind = Kind::None;
    std::int64_t rows = 0, cols = 0; // Shift: circular roll amounts
    double sigma = 0.0;              // Noise: stddev
};

struct TaskSpec {
    std::int64_t n_classes = 4;
    std::int64_t channels = 1, height = 8, width = 8;
    Generator generator = Generator::Bars;
    std::vector<Transform> transforms;
    std::uint64_t seed = 1;
    std::int64_t n_train = 512, n_val = 256;

    void validate() const {
        if (n_classes < 2) throw ConfigError("task needs at least 2 classes");
        if (channels != 1) throw ConfigError("task images are single-channel");
        if (height < 4 || width < 4) throw ConfigError("task images must be at least 4x4");
        if (n_train < n_classes || n_val < n_classes)
            throw ConfigError("split sizes must be at least n_classes");
        for (const Transform& t : transforms)
            if (t.kind == Transform::Kind::Noise && !(t.sigma >= 0))
                throw ConfigError("noise sigma must be >= 0");
    }
};

template <typename S>
struct Dataset {
    Tensor<S> images; // (N, C, H, W)
    std::vector<int> labels;
    std::string split; // "train" or "val"

    std::int64_t size() const { return images.shape().dim(0); }
};

namespace detail {

// Base patterns, before transforms. Class c is a one-pixel-wide bar:
// even classes horizontal at row 2*(c/2)+1, odd classes vertical at the
// matching column. Blobs place a Gaussian bump on a class-specific center.
// Per-sample amplitude jitter keeps samples distinct without breaking
// linear separability.
template <typename S>
void render_base(const TaskSpec& spec, std::int64_t index, int label, Tensor<S>& img) {
    Rng rng = Rng::derive(spec.seed, static_cast<std::uint64_t>(index) << 8);
    const S amp = S(0.75) + S(0.5) * static_cast<S>(rng.next_uniform());
    const std::int64_t h = spec.height, w = spec.width;
    if (spec.generator == Generator::Bars) {
        const std::int64_t pos = 2 * (label / 2) + 1;
        if (label % 2 == 0) {
            for (std::int64_t x = 0; x < w; ++x) img.at(0, 0, pos % h, x) = amp;
        } else {
            for (std::int64_t y = 0; y < h; ++y) img.at(0, 0, y, pos % w) = amp;
        }
    } else {
        const double angle = 2.0 * 3.14159265358979323846 * label / static_cast<double>(spec.n_classes);
        const double cy = h / 2.0 + 0.3 * h * std::sin(angle);
        const double cx = w / 2.0 + 0.3 * w * std::cos(angle);
        const double r2 = 2.0 * 1.5 * 1.5;
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                img.at(0, 0, y, x) = amp * static_cast<S>(std::exp(-d2 / r2));
            }
    }
}

template <typename S>
void apply_transform(const TaskSpec& spec, const Transform& t, std::int64_t index, std::size_t slot,
                     Tensor<S>& img) {
    const std::int64_t h = spec.height, w = spec.width;
    switch (t.kind) {
    case Transform::Kind::None:
        break;
    case Transform::Kind::Shift: {
        Tensor<S> out(img.shape());
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) {
                const std::int64_t sy = ((y - t.rows) % h + h) % h;
                const std::int64_t sx = ((x - t.cols) % w + w) % w;
                out.at(0, 0, y, x) = img.at(0, 0, sy, sx);
            }
        img = std::move(out);
        break;
    }
    case Transform::Kind::Rotate90: {
        if (h != w) throw ShapeError("rotate90 requires square images");
        Tensor<S> out(img.shape());
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x) out.at(0, 0, y, x) = img.at(0, 0, h - 1 - x, y);
        img = std::move(out);
        break;
    }
    case Transform::Kind::Noise: {
        Rng rng = Rng::derive(spec.seed, (static_cast<std::uint64_t>(index) << 8) | (slot + 1));
        for (std::int64_t y = 0; y < h; ++y)
            for (std::int64_t x = 0; x < w; ++x)
                img.at(0, 0, y, x) += static_cast<S>(t.sigma) * static_cast<S>(rng.next_gaussian());
        break;
    }
    }
}

template <typename S>
Dataset<S> generate_split(const TaskSpec& spec, std::int64_t count, std::int64_t index_base,
                          const std::string& split) {
    Dataset<S> d;
    d.split = split;
    d.images = zeros<S>(Shape{count, spec.channels, spec.height, spec.width});
    d.labels.reserve(static_cast<std::size_t>(count));
    Tensor<S> img(Shape{1, spec.channels, spec.height, spec.width});
    for (std::int64_t i = 0; i < count; ++i) {
        const std::int64_t index = index_base + i;
        const int label = static_cast<int>(index % spec.n_classes);
        for (std::uint64_t p = 0; p < img.numel(); ++p) img[p] = S(0);
        render_base(spec, index, label, img);
        for (std::size_t slot = 0; slot < spec.transforms.size(); ++slot)
            apply_transform(spec, spec.transforms[slot], index, slot, img);
        for (std::int64_t c = 0; c < spec.channels; ++c)
            for (std::int64_t y = 0; y < spec.height; ++y)
                for (std::int64_t x = 0; x < spec.width; ++x)
                    d.images.at(i, c, y, x) = img.at(0, c, y, x);
        d.labels.push_back(label);
    }
    check_finite(d.images, "generate");
    return d;
}

} // namespace detail

// Train indices are [0, n_train), val indices continue after them, so the
// two splits never share a sample and labels stay round-robin balanced.
template <typename S>
std::pair<Dataset<S>, Dataset<S>> generate(const TaskSpec& spec, std::int64_t n_train, std::int64_t n_val) {
    TaskSpec s = spec;
    s.n_train = n_train;
    s.n_val = n_val;
    s.validate();
    return {detail::generate_split<S>(s, n_train, 0, "train"),
            detail::generate_split<S>(s, n_val, n_train, "val")};
}

template <typename S>
std::pair<Dataset<S>, Dataset<S>> generate(const TaskSpec& spec) {
    return generate<S>(spec, spec.n_train, spec.n_val);
}

inline nlohmann::json transform_to_json(const Transform& t) {
    switch (t.kind) {
    case Transform::Kind::None: return {{"kind", "none"}};
    case Transform::Kind::Shift: return {{"kind", "shift"}, {"rows", t.rows}, {"cols", t.cols}};
    case Transform::Kind::Rotate90: return {{"kind", "rotate90"}};
    case Transform::Kind::Noise: return {{"kind", "noise"}, {"sigma", t.sigma}};
    }
    throw ConfigError("unreachable transform kind");
}

inline Transform transform_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("transform must be an object");
    Transform t;
    const std::string kind = j.at("kind").get<std::string>();
    std::vector<std::string> allowed{"kind"};
    if (kind == "none") {
        t.kind = Transform::Kind::None;
    } else if (kind == "shift") {
        t.kind = Transform::Kind::Shift;
        t.rows = j.at("rows").get<std::int64_t>();
        t.cols = j.at("cols").get<std::int64_t>();
        allowed.push_back("rows");
        allowed.push_back("cols");
    } else if (kind == "rotate90") {
        t.kind = Transform::Kind::Rotate90;
    } else if (kind == "noise") {
        t.kind = Transform::Kind::Noise;
        t.sigma = j.at("sigma").get<double>();
        allowed.push_back("sigma");
    } else {
        throw ConfigError("unknown transform kind \"" + kind + "\"");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const auto& k : allowed) known = known || it.key() == k;
        if (!known) throw ConfigError("unknown key \"" + it.key() + "\" in transform");
    }
    return t;
}

inline nlohmann::json task_to_json(const TaskSpec& spec) {
    nlohmann::json j;
    j["n_classes"] = spec.n_classes;
    j["size"] = {spec.channels, spec.height, spec.width};
    j["generator"] = generator_name(spec.generator);
    j["transform"] = nlohmann::json::array();
    for (const Transform& t : spec.transforms) j["transform"].push_back(transform_to_json(t));
    j["seed"] = spec.seed;
    j["n_train"] = spec.n_train;
    j["n_val"] = spec.n_val;
    return j;
}

// A single transform object is accepted in place of a one-element list.
inline TaskSpec task_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("task must be a JSON object");
    static const std::vector<std::string> allowed{"n_classes", "size",  "generator", "transform",
                                                  "seed",      "n_train", "n_val"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const auto& k : allowed) known = known || it.key() == k;
        if (!known) throw ConfigError("unknown key \"" + it.key() + "\" in task");
    }
    TaskSpec spec;
    if (j.contains("n_classes")) spec.n_classes = j.at("n_classes").get<std::int64_t>();
    if (j.contains("size")) {
        const auto& s = j.at("size");
        if (!s.is_array() || s.size() != 3) throw ConfigError("task size must be [C, H, W]");
        spec.channels = s[0].get<std::int64_t>();
        spec.height = s[1].get<std::int64_t>();
        spec.width = s[2].get<std::int64_t>();
    }
    if (j.contains("generator")) spec.generator = parse_generator(j.at("generator").get<std::string>());
    if (j.contains("transform")) {
        const auto& t = j.at("transform");
        if (t.is_array())
            for (const auto& item : t) spec.transforms.push_back(transform_from_json(item));
        else
            spec.transforms.push_back(transform_from_json(t));
    }
    if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("n_train")) spec.n_train = j.at("n_train").get<std::int64_t>();
    if (j.contains("n_val")) spec.n_val = j.at("n_val").get<std::int64_t>();
    spec.validate();
    return spec;
}

template <typename S>
void save_dataset(const std::string& path, const Dataset<S>& d, const TaskSpec& spec) {
    io::Lckp ck;
    ck.put_tensor("images", d.images);
    Tensor<double> labels(Shape{static_cast<std::int64_t>(d.labels.size())});
    for (std::size_t i = 0; i < d.labels.size(); ++i) labels[i] = static_cast<double>(d.labels[i]);
    ck.put_tensor("labels", labels);
    nlohmann::json meta = task_to_json(spec);
    meta["split"] = d.split;
    ck.put_text("meta.json", meta.dump(2));
    ck.save(path);
}

template <typename S>
Dataset<S> load_dataset(const std::string& path) {
    const io::Lckp ck = io::Lckp::load(path);
    Dataset<S> d;
    d.images = ck.get_tensor<S>("images");
    const Tensor<double> labels = ck.get_tensor<double>("labels");
    d.labels.reserve(labels.numel());
    for (std::uint64_t i = 0; i < labels.numel(); ++i) {
        const double v = labels[i];
        if (v != std::floor(v) || v < 0) throw IoError(path + ": labels entry " + std::to_string(i) + " is not a class index");
        d.labels.push_back(static_cast<int>(v));
    }
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(ck.get_text("meta.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": bad meta.json: " + e.what());
    }
    d.split = meta.value("split", "train");
    return d;
}

} // namespace liera::data
