#pragma once

// Experiment configuration: a strict JSON document. Unknown keys are
// rejected everywhere so typos fail loudly, and all paths are resolved
// relative to the config file's directory.

#include <cstdint>
#include <filesystem>
#include <string>

#include "liera/data.hpp"
#include "liera/optim.hpp"
#include "liera/peft.hpp"
#include "liera/tensor.hpp"

namespace liera::cli {

struct ExperimentConfig {
    std::uint64_t seed = 0;
    data::TaskSpec task;
    std::string model = "smallcnn";
    std::string phase; // "pretrain" or "finetune"; commands enforce
    peft::AdapterConfig adapter;
    bool has_adapter = false;
    optim::OptimConfig optim;
    std::int64_t epochs = 0; // 0 means phase default (20 pretrain, 30 finetune)
    std::int64_t batch_size = 32;
    DType dtype = DType::F64;
    std::filesystem::path checkpoint_in;
    std::filesystem::path checkpoint_out;
    std::filesystem::path report_out;
    bool measure_time = false; // real wall_ms in report rows; off keeps reports byte-stable
    std::string run_id;        // config file stem

    std::int64_t effective_epochs() const {
        if (epochs > 0) return epochs;
        return phase == "finetune" ? 30 : 20;
    }
};

ExperimentConfig load_config(const std::filesystem::path& path);

} // namespace liera::cli
