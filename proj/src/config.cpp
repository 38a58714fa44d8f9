#include "config.hpp"

#include <fstream>
#include <vector>

#include "json.hpp"

#include "liera/error.hpp"
#include "liera/nn.hpp"

namespace liera::cli {

namespace {

void reject_unknown(const nlohmann::json& obj, const std::vector<std::string>& allowed,
                    const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const auto& k : allowed) known = known || it.key() == k;
        if (!known) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
    }
}

std::filesystem::path resolve(const std::filesystem::path& base_dir, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

peft::AdapterConfig parse_adapter(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("adapter must be a JSON object");
    reject_unknown(j, {"rank", "alpha", "lift_mode", "init_stddev", "target"}, "adapter");
    peft::AdapterConfig a;
    if (j.contains("rank")) a.rank = j.at("rank").get<std::int64_t>();
    a.alpha = j.contains("alpha") ? j.at("alpha").get<double>() : 2.0 * static_cast<double>(a.rank);
    if (j.contains("lift_mode")) a.lift_mode = peft::parse_lift_mode(j.at("lift_mode").get<std::string>());
    if (j.contains("init_stddev")) a.init_stddev = j.at("init_stddev").get<double>();
    if (j.contains("target")) a.target = j.at("target").get<std::string>();
    a.validate();
    return a;
}

optim::OptimConfig parse_optim(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("optim must be a JSON object");
    reject_unknown(j, {"kind", "lr", "betas", "eps", "weight_decay", "momentum", "clip_norm"}, "optim");
    optim::OptimConfig o;
    if (j.contains("kind")) o.kind = optim::parse_opt_kind(j.at("kind").get<std::string>());
    if (j.contains("lr")) o.lr = j.at("lr").get<double>();
    if (j.contains("betas")) {
        const auto& b = j.at("betas");
        if (!b.is_array() || b.size() != 2) throw ConfigError("optim betas must be [beta1, beta2]");
        o.beta1 = b[0].get<double>();
        o.beta2 = b[1].get<double>();
    }
    if (j.contains("eps")) o.eps = j.at("eps").get<double>();
    if (j.contains("weight_decay")) o.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("momentum")) o.momentum = j.at("momentum").get<double>();
    if (j.contains("clip_norm")) o.clip_norm = j.at("clip_norm").get<double>();
    o.validate();
    return o;
}

} // namespace

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");

    reject_unknown(j,
                   {"seed", "task", "model", "phase", "adapter", "optim", "epochs", "batch_size", "dtype",
                    "checkpoint_in", "checkpoint_out", "report_out", "measure_time"},
                   "config");

    ExperimentConfig cfg;
    try {
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("task")) cfg.task = data::task_from_json(j.at("task"));
        if (j.contains("model")) {
            cfg.model = j.at("model").get<std::string>();
            nn::parse_arch(cfg.model); // reject bad names now, not at run time
        }
        if (j.contains("phase")) {
            cfg.phase = j.at("phase").get<std::string>();
            if (cfg.phase != "pretrain" && cfg.phase != "finetune")
                throw ConfigError("phase must be \"pretrain\" or \"finetune\"");
        }
        if (j.contains("adapter")) {
            cfg.adapter = parse_adapter(j.at("adapter"));
            cfg.has_adapter = true;
        }
        if (j.contains("optim")) cfg.optim = parse_optim(j.at("optim"));
        if (j.contains("epochs")) {
            cfg.epochs = j.at("epochs").get<std::int64_t>();
            if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
        }
        if (j.contains("batch_size")) {
            cfg.batch_size = j.at("batch_size").get<std::int64_t>();
            if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
        }
        if (j.contains("dtype")) {
            const std::string d = j.at("dtype").get<std::string>();
            if (d == "f32")
                cfg.dtype = DType::F32;
            else if (d == "f64")
                cfg.dtype = DType::F64;
            else
                throw ConfigError("dtype must be \"f32\" or \"f64\"");
        }
        if (j.contains("measure_time")) cfg.measure_time = j.at("measure_time").get<bool>();

        const std::filesystem::path base_dir = path.has_parent_path() ? path.parent_path() : ".";
        if (j.contains("checkpoint_in"))
            cfg.checkpoint_in = resolve(base_dir, j.at("checkpoint_in").get<std::string>());
        if (j.contains("checkpoint_out"))
            cfg.checkpoint_out = resolve(base_dir, j.at("checkpoint_out").get<std::string>());
        if (j.contains("report_out"))
            cfg.report_out = resolve(base_dir, j.at("report_out").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }

    cfg.run_id = path.stem().string();
    for (char& c : cfg.run_id)
        if (c == ',' || c == '\n' || c == '\r') c = '_';
    return cfg;
}

} // namespace liera::cli
