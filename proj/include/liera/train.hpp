#pragma once

// Epoch-driven training loop shared by pretraining and fine-tuning. Batches
// run in a fixed order with no shuffling, so a seeded run produces the same
// loss curve every time; wall_ms stays 0 unless timing is requested, which
// keeps report files byte-stable.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <map>
#include <string>
#include <vector>

#include "liera/data.hpp"
#include "liera/nn.hpp"
#include "liera/optim.hpp"
#include "liera/tensor.hpp"

namespace liera::train {

// Thread CPU time. Unlike the wall clock this does not count time the
// scheduler spends running somebody else, which is most of the noise when
// timing sub-second training runs on a busy box.
inline double thread_cpu_ms() {
    timespec ts{};
    clock_gettime(CLOCK_THREAD_CPUTIME_ID, &ts);
    return static_cast<double>(ts.tv_sec) * 1e3 + static_cast<double>(ts.tv_nsec) * 1e-6;
}

struct RunReportRow {
    std::string run_id;
    std::uint64_t seed = 0;
    std::string lift_mode = "none";
    std::int64_t rank = 0;
    double alpha = 0.0;
    std::int64_t trainable_params = 0;
    std::int64_t total_params = 0;
    std::int64_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double wall_ms = 0.0;
};

struct FitOptions {
    std::string run_id = "run";
    std::uint64_t seed = 0;
    std::int64_t epochs = 1;
    std::int64_t batch_size = 32;
    optim::OptimConfig optim;
    bool train_base = true;    // false trains adapter factors only
    bool emit_epoch0 = false;  // pre-step eval row (fine-tune identity check)
    bool measure_time = false; // real per-epoch wall_ms instead of 0
};

struct FitResult {
    std::vector<RunReportRow> rows;
    double final_train_loss = 0.0;
    double final_train_acc = 0.0;
    double final_val_loss = 0.0;
    double final_val_acc = 0.0;
    double compute_ms = 0.0;      // forward+backward+step time, always measured
    std::vector<double> step_ms;  // the same time, per optimizer step

    // Scheduler hiccups land on single steps, so the raw sum over a short run
    // is dominated by outliers. A 10% trimmed mean of the step times, scaled
    // back up to the full step count, is the stable estimate the bench reports.
    double robust_compute_ms() const {
        if (step_ms.empty()) return 0.0;
        std::vector<double> s = step_ms;
        std::sort(s.begin(), s.end());
        const std::size_t n = s.size();
        const std::size_t cut = n / 10;
        double sum = 0.0;
        for (std::size_t i = cut; i < n - cut; ++i) sum += s[i];
        return sum / static_cast<double>(n - 2 * cut) * static_cast<double>(n);
    }
};

// Contiguous sample range [start, start+count) of an (N, C, H, W) block.
template <typename S>
Tensor<S> slice_batch(const Tensor<S>& images, std::int64_t start, std::int64_t count) {
    const Shape& s = images.shape();
    Tensor<S> out(Shape{count, s.dim(1), s.dim(2), s.dim(3)});
    const std::uint64_t stride = static_cast<std::uint64_t>(s.dim(1) * s.dim(2) * s.dim(3));
    for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(count) * stride; ++i)
        out[i] = images[static_cast<std::uint64_t>(start) * stride + i];
    return out;
}

template <typename S>
struct EvalResult {
    double loss = 0.0;
    double acc = 0.0;
};

template <typename S>
EvalResult<S> evaluate(nn::Model<S>& model, const data::Dataset<S>& ds, std::int64_t batch_size) {
    const std::int64_t n = ds.size();
    double loss_sum = 0.0;
    std::int64_t hits = 0;
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t count = std::min(batch_size, n - start);
        const Tensor<S> batch = slice_batch(ds.images, start, count);
        const std::vector<int> labels(ds.labels.begin() + start, ds.labels.begin() + start + count);
        autograd::Tape<S> tape;
        const nn::ForwardResult<S> fwd = nn::model_forward(model, tape, batch, false);
        autograd::VarId loss = tape.softmax_xent(fwd.logits, labels);
        loss_sum += static_cast<double>(tape.val(loss)[0]) * static_cast<double>(count);
        hits += optim::correct_count(tape.val(fwd.logits), labels);
    }
    return {loss_sum / static_cast<double>(n), static_cast<double>(hits) / static_cast<double>(n)};
}

template <typename S>
FitResult fit(nn::Model<S>& model, const data::Dataset<S>& train_ds, const data::Dataset<S>& val_ds,
              const FitOptions& opt) {
    if (opt.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (opt.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    opt.optim.validate();

    FitResult result;
    optim::TrainState<S> state;
    const std::int64_t n = train_ds.size();

    RunReportRow proto;
    proto.run_id = opt.run_id;
    proto.seed = opt.seed;
    proto.trainable_params = nn::trainable_param_count(model);
    proto.total_params = nn::total_param_count(model);
    for (const auto& l : model.layers) {
        if (!l.adapter) continue;
        proto.lift_mode = peft::lift_mode_name(l.adapter->config.lift_mode);
        proto.rank = l.adapter->config.rank;
        proto.alpha = l.adapter->config.alpha;
        break;
    }

    if (opt.emit_epoch0) {
        const EvalResult<S> tr = evaluate(model, train_ds, opt.batch_size);
        const EvalResult<S> va = evaluate(model, val_ds, opt.batch_size);
        RunReportRow row = proto;
        row.epoch = 0;
        row.train_loss = tr.loss;
        row.val_loss = va.loss;
        row.val_acc = va.acc;
        result.rows.push_back(row);
    }

    for (std::int64_t epoch = 1; epoch <= opt.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        double compute_ms = 0.0;
        for (std::int64_t start = 0; start < n; start += opt.batch_size) {
            const std::int64_t count = std::min(opt.batch_size, n - start);
            const Tensor<S> batch = slice_batch(train_ds.images, start, count);
            const std::vector<int> labels(train_ds.labels.begin() + start,
                                          train_ds.labels.begin() + start + count);
            const double step_start = thread_cpu_ms();
            autograd::Tape<S> tape;
            const nn::ForwardResult<S> fwd = nn::model_forward(model, tape, batch, opt.train_base);
            autograd::VarId loss = tape.softmax_xent(fwd.logits, labels);
            const autograd::GradMap<S> gm = tape.backward(loss);

            std::vector<std::pair<std::string, Tensor<S>>> params;
            std::map<std::string, Tensor<S>> grads;
            for (const auto& [name, id] : fwd.trainables) {
                params.emplace_back(name, tape.val(id));
                grads.emplace(name, gm.at(id.index));
            }
            nn::apply_updates(model, optim::step(state, opt.optim, params, std::move(grads)));
            const double step_elapsed = thread_cpu_ms() - step_start;
            compute_ms += step_elapsed;
            result.step_ms.push_back(step_elapsed);
            loss_sum += static_cast<double>(tape.val(loss)[0]) * static_cast<double>(count);
        }
        result.compute_ms += compute_ms;

        const EvalResult<S> va = evaluate(model, val_ds, opt.batch_size);
        RunReportRow row = proto;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(n);
        row.val_loss = va.loss;
        row.val_acc = va.acc;
        if (opt.measure_time)
            row.wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - epoch_start)
                    .count();
        result.rows.push_back(row);
        result.final_train_loss = row.train_loss;
        result.final_val_loss = row.val_loss;
        result.final_val_acc = row.val_acc;
    }

    result.final_train_acc = evaluate(model, train_ds, opt.batch_size).acc;
    return result;
}

} // namespace liera::train
