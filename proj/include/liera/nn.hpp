#pragma once

// Reference models: a two-layer MLP and a small CNN, stored as an ordered
// list of parameter-bearing layers. Activations and flattening are part of
// the architecture's forward pass, not separate layers.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "liera/autograd.hpp"
#include "liera/io.hpp"
#include "liera/peft.hpp"
#include "liera/rng.hpp"
#include "liera/tensor.hpp"

#include "json.hpp"

namespace liera::nn {

enum class Arch { Mlp, SmallCnn };

inline const char* arch_name(Arch a) { return a == Arch::Mlp ? "mlp" : "smallcnn"; }

inline Arch parse_arch(const std::string& s) {
    if (s == "mlp") return Arch::Mlp;
    if (s == "smallcnn") return Arch::SmallCnn;
    throw ConfigError("unknown model \"" + s + "\" (expected mlp or smallcnn)");
}

template <typename S>
struct Layer {
    std::string name;
    bool is_conv = false;
    Tensor<S> weight; // (n_out, n_in) for linear, (C_out, C_in, k, k) for conv
    std::optional<Tensor<S>> bias;
    std::int64_t stride = 1, pad = 0;
    bool frozen = false;
    std::optional<peft::AttachedAdapter<S>> adapter;
};

template <typename S>
struct Model {
    Arch arch = Arch::Mlp;
    std::int64_t n_classes = 0;
    std::vector<Layer<S>> layers;

    Layer<S>& layer(const std::string& name) {
        for (auto& l : layers)
            if (l.name == name) return l;
        throw ConfigError("no layer named \"" + name + "\"");
    }
};

namespace detail {

template <typename S>
Tensor<S> he_init(const Shape& shape, std::int64_t fan_in, Rng& rng) {
    return gaussian<S>(shape, S(0), std::sqrt(S(2) / static_cast<S>(fan_in)), rng);
}

} // namespace detail

// linear(64 -> 32) / relu / linear(32 -> n_classes), for flattened 8x8 inputs.
template <typename S>
Model<S> build_mlp(std::int64_t n_classes, Rng& rng) {
    if (n_classes < 2) throw ConfigError("mlp needs at least 2 classes");
    Model<S> m;
    m.arch = Arch::Mlp;
    m.n_classes = n_classes;
    m.layers.push_back({"linear1", false, detail::he_init<S>(Shape{32, 64}, 64, rng), zeros<S>(Shape{32}), 1, 0,
                        false, std::nullopt});
    m.layers.push_back({"linear2", false, detail::he_init<S>(Shape{n_classes, 32}, 32, rng),
                        zeros<S>(Shape{n_classes}), 1, 0, false, std::nullopt});
    return m;
}

// conv(1->8, k3, p1) / relu / conv(8->8, k3, p1) / relu / flatten /
// linear(512 -> n_classes), for (B, 1, 8, 8) inputs.
template <typename S>
Model<S> build_smallcnn(std::int64_t n_classes, Rng& rng) {
    if (n_classes < 2) throw ConfigError("smallcnn needs at least 2 classes");
    Model<S> m;
    m.arch = Arch::SmallCnn;
    m.n_classes = n_classes;
    Layer<S> c1{"conv1", true, detail::he_init<S>(Shape{8, 1, 3, 3}, 9, rng), std::nullopt, 1, 1, false,
                std::nullopt};
    Layer<S> c2{"conv2", true, detail::he_init<S>(Shape{8, 8, 3, 3}, 72, rng), std::nullopt, 1, 1, false,
                std::nullopt};
    Layer<S> fc{"linear1", false, detail::he_init<S>(Shape{n_classes, 512}, 512, rng), zeros<S>(Shape{n_classes}),
                1, 0, false, std::nullopt};
    m.layers.push_back(std::move(c1));
    m.layers.push_back(std::move(c2));
    m.layers.push_back(std::move(fc));
    return m;
}

template <typename S>
Model<S> build_model(Arch arch, std::int64_t n_classes, Rng& rng) {
    return arch == Arch::Mlp ? build_mlp<S>(n_classes, rng) : build_smallcnn<S>(n_classes, rng);
}

struct ParamInfo {
    std::string name;
    Shape shape;
    bool frozen = false;
};

template <typename S>
std::vector<ParamInfo> registry(const Model<S>& model) {
    std::vector<ParamInfo> out;
    for (const auto& l : model.layers) {
        out.push_back({l.name + (l.is_conv ? ".kernel" : ".W"), l.weight.shape(), l.frozen});
        if (l.bias) out.push_back({l.name + ".bias", l.bias->shape(), l.frozen});
        if (l.adapter) {
            out.push_back({l.name + ".A", l.adapter->factors.A.shape(), false});
            out.push_back({l.name + ".B", l.adapter->factors.B.shape(), false});
        }
    }
    return out;
}

template <typename S>
std::int64_t total_param_count(const Model<S>& model) {
    std::int64_t n = 0;
    for (const auto& l : model.layers) {
        n += static_cast<std::int64_t>(l.weight.numel());
        if (l.bias) n += static_cast<std::int64_t>(l.bias->numel());
    }
    return n;
}

template <typename S>
std::int64_t trainable_param_count(const Model<S>& model) {
    std::int64_t n = 0;
    bool any_adapter = false;
    for (const auto& l : model.layers)
        if (l.adapter) any_adapter = true;
    for (const auto& l : model.layers) {
        if (any_adapter) {
            if (l.adapter)
                n += static_cast<std::int64_t>(l.adapter->factors.A.numel() + l.adapter->factors.B.numel());
        } else if (!l.frozen) {
            n += static_cast<std::int64_t>(l.weight.numel());
            if (l.bias) n += static_cast<std::int64_t>(l.bias->numel());
        }
    }
    return n;
}

// Matches '*' against any run of characters and '?' against one.
inline bool glob_match(const std::string& pattern, const std::string& name) {
    std::size_t p = 0, n = 0, star = std::string::npos, mark = 0;
    while (n < name.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
            ++p, ++n;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = n;
        } else if (star != std::string::npos) {
            p = star + 1;
            n = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

// Comma-separated glob list, e.g. "conv*,linear*".
inline bool selector_match(const std::string& selector, const std::string& name) {
    std::size_t start = 0;
    while (start <= selector.size()) {
        const std::size_t comma = selector.find(',', start);
        const std::string part = selector.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!part.empty() && glob_match(part, name)) return true;
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return false;
}

struct AttachReport {
    std::vector<std::string> attached;
    std::vector<std::string> warnings;
};

template <typename S>
void freeze_all_base(Model<S>& model) {
    for (auto& l : model.layers) l.frozen = true;
}

// Freezes every base parameter and attaches freshly initialized adapters to
// the layers matched by config.target. A selector that matches nothing is an
// error; zero entries in a base weight are reported but not clamped, since
// multiplicative updates simply cannot move them.
template <typename S>
AttachReport attach_adapters(Model<S>& model, const peft::AdapterConfig& config, Rng& rng) {
    config.validate();
    freeze_all_base(model);
    AttachReport report;
    for (auto& l : model.layers) {
        if (!selector_match(config.target, l.name)) continue;
        if (l.adapter) throw ConfigError("layer \"" + l.name + "\" already has an adapter");
        const Shape& ws = l.weight.shape();
        const std::int64_t n = ws.dim(0);
        const std::int64_t m = l.is_conv ? ws.dim(1) * ws.dim(2) * ws.dim(3) : ws.dim(1);
        peft::AttachedAdapter<S> a;
        a.base = l.weight;
        a.factors = peft::init_factors<S>(n, m, config.rank, static_cast<S>(config.alpha),
                                          static_cast<S>(config.init_stddev), rng);
        a.config = config;
        const lie::MembershipReport mem = lie::check_membership(a.base, membership_eps<S>());
        if (!mem.ok)
            report.warnings.push_back("layer \"" + l.name + "\": base weight has a zero entry (" + mem.str() +
                                      "); multiplicative lifts leave it fixed");
        l.adapter = std::move(a);
        report.attached.push_back(l.name);
    }
    if (report.attached.empty())
        throw ConfigError("adapter target \"" + config.target + "\" matched no layer");
    return report;
}

template <typename S>
void detach_adapters(Model<S>& model) {
    for (auto& l : model.layers) l.adapter.reset();
}

template <typename S>
std::vector<std::pair<std::string, Shape>> adapted_layer_shapes(const Model<S>& model) {
    std::vector<std::pair<std::string, Shape>> out;
    for (const auto& l : model.layers)
        if (l.adapter) out.emplace_back(l.name, l.weight.shape());
    return out;
}

template <typename S>
struct ForwardResult {
    autograd::VarId logits{};
    // Tape ids of the parameters that should receive optimizer updates.
    std::vector<std::pair<std::string, autograd::VarId>> trainables;
};

// Builds the forward pass on the tape. Base weights become trainable only
// when train_base is set and the layer is not frozen; adapter factors are
// always trainable. Input batches are (B, C, H, W); the MLP flattens them.
template <typename S>
ForwardResult<S> model_forward(Model<S>& model, autograd::Tape<S>& tape, const Tensor<S>& batch,
                               bool train_base) {
    ForwardResult<S> res;
    autograd::VarId x = tape.var_input(batch);
    if (model.arch == Arch::Mlp && batch.shape().rank() == 4) {
        const Shape& s = batch.shape();
        x = tape.reshape(x, Shape{s.dim(0), s.dim(1) * s.dim(2) * s.dim(3)});
    }

    auto weight_var = [&](Layer<S>& l) -> autograd::VarId {
        if (l.adapter && !l.adapter->merged) {
            autograd::VarId base = tape.var_input(l.adapter->base);
            autograd::VarId a = tape.var_param(l.adapter->factors.A);
            autograd::VarId b = tape.var_param(l.adapter->factors.B);
            res.trainables.emplace_back(l.name + ".A", a);
            res.trainables.emplace_back(l.name + ".B", b);
            return peft::lift_on_tape(tape, base, a, b, *l.adapter);
        }
        const Tensor<S>& w = l.adapter ? l.adapter->base : l.weight;
        if (train_base && !l.frozen) {
            autograd::VarId id = tape.var_param(w);
            res.trainables.emplace_back(l.name + (l.is_conv ? ".kernel" : ".W"), id);
            return id;
        }
        return tape.var_input(w);
    };

    for (auto& l : model.layers) {
        if (l.is_conv) {
            x = tape.relu(tape.conv2d(x, weight_var(l), l.stride, l.pad));
        } else {
            const Shape& xs = tape.val(x).shape();
            if (xs.rank() == 4) x = tape.reshape(x, Shape{xs.dim(0), xs.dim(1) * xs.dim(2) * xs.dim(3)});
            autograd::VarId h = tape.matmul(x, tape.transpose(weight_var(l)));
            if (l.bias) {
                if (train_base && !l.frozen) {
                    autograd::VarId b = tape.var_param(*l.bias);
                    res.trainables.emplace_back(l.name + ".bias", b);
                    h = tape.add_bias(h, b);
                } else {
                    h = tape.add_bias(h, tape.var_input(*l.bias));
                }
            }
            // Hidden linear layers take relu; the last layer emits logits.
            x = (&l == &model.layers.back()) ? h : tape.relu(h);
        }
    }
    res.logits = x;
    return res;
}

template <typename S>
Tensor<S> predict_logits(Model<S>& model, const Tensor<S>& batch) {
    autograd::Tape<S> tape;
    const ForwardResult<S> r = model_forward(model, tape, batch, false);
    return tape.val(r.logits);
}

// Writes every tensor named in updates back into the model (base parameters
// or adapter factors, by registry name).
template <typename S>
void apply_updates(Model<S>& model, const std::vector<std::pair<std::string, Tensor<S>>>& updates) {
    for (const auto& [name, value] : updates) {
        const std::size_t dot = name.rfind('.');
        if (dot == std::string::npos) throw ConfigError("bad parameter name \"" + name + "\"");
        Layer<S>& l = model.layer(name.substr(0, dot));
        const std::string field = name.substr(dot + 1);
        if (field == "W" || field == "kernel") {
            require_same_shape(l.weight, value, "apply_updates");
            l.weight = value;
        } else if (field == "bias") {
            if (!l.bias) throw ConfigError("layer \"" + l.name + "\" has no bias");
            require_same_shape(*l.bias, value, "apply_updates");
            l.bias = value;
        } else if (field == "A") {
            require_same_shape(l.adapter->factors.A, value, "apply_updates");
            l.adapter->factors.A = value;
        } else if (field == "B") {
            require_same_shape(l.adapter->factors.B, value, "apply_updates");
            l.adapter->factors.B = value;
        } else {
            throw ConfigError("unknown parameter field \"" + field + "\"");
        }
    }
}

// Checkpoints hold one entry per base parameter plus, when adapters are
// attached, their factors and frozen base copies, with a meta.json entry
// describing the architecture and adapter settings.
template <typename S>
void save_checkpoint(const Model<S>& model, const std::string& path) {
    io::Lckp ck;
    nlohmann::json meta;
    meta["arch"] = arch_name(model.arch);
    meta["n_classes"] = model.n_classes;
    meta["dtype"] = dtype_name(dtype_of<S>::value);
    for (const auto& l : model.layers) {
        ck.put_tensor(l.name + (l.is_conv ? ".kernel" : ".W"), l.weight);
        if (l.bias) ck.put_tensor(l.name + ".bias", *l.bias);
    }
    bool any_adapter = false;
    for (const auto& l : model.layers) {
        if (!l.adapter) continue;
        ck.put_tensor(l.name + ".A", l.adapter->factors.A);
        ck.put_tensor(l.name + ".B", l.adapter->factors.B);
        ck.put_tensor(l.name + ".base", l.adapter->base);
        if (!any_adapter) {
            const peft::AdapterConfig& c = l.adapter->config;
            meta["adapter"] = {{"rank", c.rank},
                               {"alpha", c.alpha},
                               {"lift_mode", peft::lift_mode_name(c.lift_mode)},
                               {"init_stddev", c.init_stddev},
                               {"target", c.target}};
            meta["adapter_merged"] = l.adapter->merged;
        }
        any_adapter = true;
    }
    ck.put_text("meta.json", meta.dump(2));
    ck.save(path);
}

template <typename S>
Model<S> load_checkpoint(const std::string& path) {
    const io::Lckp ck = io::Lckp::load(path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(ck.get_text("meta.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": bad meta.json: " + e.what());
    }
    const Arch arch = parse_arch(meta.at("arch").get<std::string>());
    const std::int64_t n_classes = meta.at("n_classes").get<std::int64_t>();
    const std::string dtype = meta.at("dtype").get<std::string>();
    if (dtype != dtype_name(dtype_of<S>::value))
        throw IoError(path + ": checkpoint dtype " + dtype + " does not match requested " +
                      dtype_name(dtype_of<S>::value));

    Rng throwaway(0);
    Model<S> model = build_model<S>(arch, n_classes, throwaway);
    for (auto& l : model.layers) {
        l.weight = ck.get_tensor<S>(l.name + (l.is_conv ? ".kernel" : ".W"));
        if (l.bias) l.bias = ck.get_tensor<S>(l.name + ".bias");
    }
    if (meta.contains("adapter")) {
        const nlohmann::json& a = meta.at("adapter");
        peft::AdapterConfig cfg;
        cfg.rank = a.at("rank").get<std::int64_t>();
        cfg.alpha = a.at("alpha").get<double>();
        cfg.lift_mode = peft::parse_lift_mode(a.at("lift_mode").get<std::string>());
        cfg.init_stddev = a.at("init_stddev").get<double>();
        cfg.target = a.at("target").get<std::string>();
        const bool merged = meta.value("adapter_merged", false);
        freeze_all_base(model);
        for (auto& l : model.layers) {
            if (!ck.has(l.name + ".A")) continue;
            peft::AttachedAdapter<S> ad;
            ad.factors.A = ck.get_tensor<S>(l.name + ".A");
            ad.factors.B = ck.get_tensor<S>(l.name + ".B");
            ad.factors.alpha = static_cast<S>(cfg.alpha);
            ad.factors.rank = cfg.rank;
            ad.base = ck.has(l.name + ".base") ? ck.get_tensor<S>(l.name + ".base") : l.weight;
            ad.config = cfg;
            ad.merged = merged;
            l.adapter = std::move(ad);
        }
    }
    return model;
}

} // namespace liera::nn
