#include "commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

#include "config.hpp"
#include "report.hpp"

#include "liera/data.hpp"
#include "liera/liegroup.hpp"
#include "liera/nn.hpp"
#include "liera/train.hpp"
#include "liera/verify.hpp"

namespace liera::cli {

namespace {

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    }
}

void ensure_parent(const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

template <typename S>
int do_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto [train_ds, val_ds] = data::generate<S>(cfg.task);
    data::save_dataset((out_dir / "train.lckp").string(), train_ds, cfg.task);
    data::save_dataset((out_dir / "val.lckp").string(), val_ds, cfg.task);
    std::cout << "gen_data " << data::generator_name(cfg.task.generator) << " classes=" << cfg.task.n_classes
              << " train=" << train_ds.size() << " val=" << val_ds.size() << " -> " << out_dir.string()
              << "\n";
    return kExitOk;
}

template <typename S>
int do_pretrain(const ExperimentConfig& cfg) {
    if (cfg.phase != "pretrain") throw ConfigError("pretrain command requires phase \"pretrain\"");
    if (cfg.checkpoint_out.empty()) throw ConfigError("pretrain requires checkpoint_out");

    const auto [train_ds, val_ds] = data::generate<S>(cfg.task);
    Rng rng = Rng::derive(cfg.seed, 0);
    nn::Model<S> model = nn::build_model<S>(nn::parse_arch(cfg.model), cfg.task.n_classes, rng);

    train::FitOptions opt;
    opt.run_id = cfg.run_id;
    opt.seed = cfg.seed;
    opt.epochs = cfg.effective_epochs();
    opt.batch_size = cfg.batch_size;
    opt.optim = cfg.optim;
    opt.train_base = true;
    opt.measure_time = cfg.measure_time;
    const train::FitResult res = train::fit(model, train_ds, val_ds, opt);

    ensure_parent(cfg.checkpoint_out);
    nn::save_checkpoint(model, cfg.checkpoint_out.string());
    if (!cfg.report_out.empty()) {
        ensure_parent(cfg.report_out);
        write_run_report(cfg.report_out, res.rows);
    }
    std::cout << "pretrain " << cfg.model << " epochs=" << opt.epochs
              << " train_acc=" << format_number(res.final_train_acc)
              << " val_acc=" << format_number(res.final_val_acc) << " -> " << cfg.checkpoint_out.string()
              << "\n";
    return kExitOk;
}

template <typename S>
int do_finetune(const ExperimentConfig& cfg) {
    if (cfg.phase != "finetune") throw ConfigError("finetune command requires phase \"finetune\"");
    if (cfg.checkpoint_in.empty()) throw ConfigError("finetune requires checkpoint_in");
    if (cfg.checkpoint_out.empty()) throw ConfigError("finetune requires checkpoint_out");

    nn::Model<S> model = nn::load_checkpoint<S>(cfg.checkpoint_in.string());
    Rng rng = Rng::derive(cfg.seed, 1);
    const nn::AttachReport attach = nn::attach_adapters(model, cfg.adapter, rng);
    for (const std::string& w : attach.warnings) std::cerr << "warning: " << w << "\n";

    const auto [train_ds, val_ds] = data::generate<S>(cfg.task);
    train::FitOptions opt;
    opt.run_id = cfg.run_id;
    opt.seed = cfg.seed;
    opt.epochs = cfg.effective_epochs();
    opt.batch_size = cfg.batch_size;
    opt.optim = cfg.optim;
    opt.train_base = false;
    opt.emit_epoch0 = true;
    opt.measure_time = cfg.measure_time;
    const train::FitResult res = train::fit(model, train_ds, val_ds, opt);

    ensure_parent(cfg.checkpoint_out);
    nn::save_checkpoint(model, cfg.checkpoint_out.string());
    if (!cfg.report_out.empty()) {
        ensure_parent(cfg.report_out);
        write_run_report(cfg.report_out, res.rows);
    }
    std::cout << "finetune " << peft::lift_mode_name(cfg.adapter.lift_mode) << " rank=" << cfg.adapter.rank
              << " layers=" << attach.attached.size() << " epochs=" << opt.epochs
              << " val_acc=" << format_number(res.final_val_acc) << " -> " << cfg.checkpoint_out.string()
              << "\n";
    return kExitOk;
}

template <typename S>
int do_eval(const ExperimentConfig& cfg) {
    if (cfg.checkpoint_in.empty()) throw ConfigError("eval requires checkpoint_in");
    nn::Model<S> model = nn::load_checkpoint<S>(cfg.checkpoint_in.string());
    const auto [train_ds, val_ds] = data::generate<S>(cfg.task);
    const train::EvalResult<S> tr = train::evaluate(model, train_ds, cfg.batch_size);
    const train::EvalResult<S> va = train::evaluate(model, val_ds, cfg.batch_size);

    if (!cfg.report_out.empty()) {
        train::RunReportRow row;
        row.run_id = cfg.run_id;
        row.seed = cfg.seed;
        row.trainable_params = nn::trainable_param_count(model);
        row.total_params = nn::total_param_count(model);
        for (const auto& l : model.layers) {
            if (!l.adapter) continue;
            row.lift_mode = peft::lift_mode_name(l.adapter->config.lift_mode);
            row.rank = l.adapter->config.rank;
            row.alpha = l.adapter->config.alpha;
            break;
        }
        row.epoch = 0;
        row.train_loss = tr.loss;
        row.val_loss = va.loss;
        row.val_acc = va.acc;
        ensure_parent(cfg.report_out);
        write_run_report(cfg.report_out, {row});
    }
    std::cout << "eval " << cfg.checkpoint_in.filename().string() << " train_loss=" << format_number(tr.loss)
              << " val_loss=" << format_number(va.loss) << " val_acc=" << format_number(va.acc) << "\n";
    return kExitOk;
}

ExperimentConfig load_with_override(const std::filesystem::path& path,
                                    std::optional<std::uint64_t> seed_override) {
    ExperimentConfig cfg = load_config(path);
    if (seed_override) cfg.seed = *seed_override;
    return cfg;
}

// ---- verification suites ----

std::vector<VerifyRow> suite_group(std::uint64_t seed) {
    const Shape shape{2, 3, 3, 3};
    const lie::AxiomSuiteReport rep = lie::axiom_suite<double>(shape, 100, seed, 1e-12);
    std::vector<VerifyRow> rows;
    rows.push_back({"group", "closure_min_abs_entry", "gt", rep.closure.worst, 1e-12, rep.closure.pass});
    rows.push_back(
        {"group", "associativity_rel_err", "le", rep.associativity.worst, 1e-12, rep.associativity.pass});
    rows.push_back({"group", "identity_abs_err", "le", rep.identity.worst, 0.0, rep.identity.pass});
    rows.push_back({"group", "inverse_rel_err", "le", rep.inverse.worst, 1e-12, rep.inverse.pass});

    // exp(0) = identity, bit-exact.
    const Tensor<double> exp_zero = lie::exp_map(zeros<double>(shape)).value;
    double exp_zero_err = 0;
    for (std::uint64_t i = 0; i < exp_zero.numel(); ++i)
        exp_zero_err = std::max(exp_zero_err, std::abs(exp_zero[i] - 1.0));
    rows.push_back({"group", "exp_zero_identity_abs_err", "le", exp_zero_err, 0.0, exp_zero_err == 0.0});

    // exp(a+b) = exp(a) . exp(b), the one-parameter property.
    double one_param_worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng = Rng::derive(seed + 7, static_cast<std::uint64_t>(trial));
        const Tensor<double> a = gaussian<double>(shape, 0.0, 0.5, rng);
        const Tensor<double> b = gaussian<double>(shape, 0.0, 0.5, rng);
        const Tensor<double> lhs = lie::exp_map(add(a, b)).value;
        const Tensor<double> rhs = hadamard(lie::exp_map(a).value, lie::exp_map(b).value);
        for (std::uint64_t i = 0; i < lhs.numel(); ++i)
            one_param_worst = std::max(one_param_worst, std::abs(lhs[i] - rhs[i]) / std::abs(rhs[i]));
    }
    rows.push_back(
        {"group", "exp_one_parameter_rel_err", "le", one_param_worst, 1e-12, one_param_worst <= 1e-12});
    return rows;
}

std::vector<VerifyRow> suite_grad(std::uint64_t seed) {
    std::vector<VerifyRow> rows;
    const peft::LiftMode modes[] = {peft::LiftMode::Additive, peft::LiftMode::LieTaylor,
                                    peft::LiftMode::LieExact};
    for (bool conv : {false, true}) {
        for (peft::LiftMode mode : modes) {
            const verify::GradCheckReport rep = verify::check_adapter_gradients(conv, mode, seed);
            const std::string name = std::string(conv ? "conv" : "linear") + "_" + peft::lift_mode_name(mode);
            rows.push_back({"grad", name + "_max_rel_err", "le", rep.max_rel_err, rep.tolerance, rep.pass});
            rows.push_back({"grad", name + "_coords", "ge", static_cast<double>(rep.n_coords()), 100.0,
                            rep.n_coords() >= 100});
        }
    }
    return rows;
}

std::vector<VerifyRow> suite_rank(std::uint64_t seed) {
    const verify::RankReport rep = verify::rank_capacity_experiment(8, 8, 2, 100, seed);
    std::vector<VerifyRow> rows;
    rows.push_back({"rank", "low_rank_product_hits", "ge", static_cast<double>(rep.low_rank_hits), 100.0,
                    rep.low_rank_hits >= 100});
    rows.push_back({"rank", "hadamard_full_rank_hits", "ge", static_cast<double>(rep.full_rank_hits), 99.0,
                    rep.full_rank_hits >= 99});
    return rows;
}

std::vector<VerifyRow> suite_taylor(std::uint64_t seed) {
    const verify::TaylorProbe probe = verify::taylor_decay_probe(Shape{2, 3, 3, 3}, 0.1, seed);
    std::vector<VerifyRow> rows;
    rows.push_back({"taylor", "decay_slope_lower", "ge", probe.slope, 1.9, probe.slope >= 1.9});
    rows.push_back({"taylor", "decay_slope_upper", "le", probe.slope, 2.1, probe.slope <= 2.1});

    Tensor<double> spot_delta;
    spot_delta[0] = 0.01;
    const double spot =
        std::abs(lie::exp_map(spot_delta).value[0] - lie::taylor_exp(spot_delta)[0] - 5.0167084168056e-5);
    rows.push_back({"taylor", "scalar_spot_abs_err", "le", spot, 1e-9, spot <= 1e-9});
    return rows;
}

std::vector<VerifyRow> suite_format(const std::filesystem::path& out_dir) {
    std::vector<VerifyRow> rows;
    for (const char* name : {"group", "grad", "rank", "taylor"}) {
        const std::filesystem::path p = out_dir / (std::string(name) + ".csv");
        bool ok = std::filesystem::exists(p);
        if (ok) {
            try {
                validate_verify_file(p);
            } catch (const IoError&) {
                ok = false;
            }
        }
        rows.push_back({"format", std::string(name) + "_csv_schema", "eq", ok ? 1.0 : 0.0, 1.0, ok});
    }
    return rows;
}

} // namespace

int cmd_gen_data(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                 std::optional<std::uint64_t> seed_override) {
    return run_guarded([&] {
        ExperimentConfig cfg = load_with_override(config_path, seed_override);
        return cfg.dtype == DType::F32 ? do_gen_data<float>(cfg, out_dir) : do_gen_data<double>(cfg, out_dir);
    });
}

int cmd_pretrain(const std::filesystem::path& config_path, std::optional<std::uint64_t> seed_override) {
    return run_guarded([&] {
        ExperimentConfig cfg = load_with_override(config_path, seed_override);
        return cfg.dtype == DType::F32 ? do_pretrain<float>(cfg) : do_pretrain<double>(cfg);
    });
}

int cmd_finetune(const std::filesystem::path& config_path, std::optional<std::uint64_t> seed_override) {
    return run_guarded([&] {
        ExperimentConfig cfg = load_with_override(config_path, seed_override);
        return cfg.dtype == DType::F32 ? do_finetune<float>(cfg) : do_finetune<double>(cfg);
    });
}

int cmd_eval(const std::filesystem::path& config_path, std::optional<std::uint64_t> seed_override) {
    return run_guarded([&] {
        ExperimentConfig cfg = load_with_override(config_path, seed_override);
        return cfg.dtype == DType::F32 ? do_eval<float>(cfg) : do_eval<double>(cfg);
    });
}

int cmd_verify(const std::string& suite, const std::filesystem::path& out_dir, std::uint64_t seed) {
    return run_guarded([&] {
        std::filesystem::create_directories(out_dir);
        const bool all = suite == "all";
        bool ran_any = false;
        bool all_pass = true;

        auto run_suite = [&](const char* name, const std::function<std::vector<VerifyRow>()>& fn) {
            const std::vector<VerifyRow> rows = fn();
            write_verify_report(out_dir / (std::string(name) + ".csv"), rows);
            bool pass = true;
            for (const VerifyRow& r : rows) pass = pass && r.pass;
            std::cout << "verify " << name << ": " << (pass ? "pass" : "FAIL") << " (" << rows.size()
                      << " checks)\n";
            if (!pass)
                for (const VerifyRow& r : rows)
                    if (!r.pass)
                        std::cout << "  FAIL " << r.check << " value=" << format_number(r.value) << " "
                                  << r.comparator << " " << format_number(r.threshold) << "\n";
            all_pass = all_pass && pass;
            ran_any = true;
        };

        if (all || suite == "group") run_suite("group", [&] { return suite_group(seed); });
        if (all || suite == "grad") run_suite("grad", [&] { return suite_grad(seed); });
        if (all || suite == "rank") run_suite("rank", [&] { return suite_rank(seed); });
        if (all || suite == "taylor") run_suite("taylor", [&] { return suite_taylor(seed); });
        if (all || suite == "format") run_suite("format", [&] { return suite_format(out_dir); });
        if (!ran_any) throw ConfigError("unknown verify suite \"" + suite + "\"");
        return all_pass ? kExitOk : kExitVerifyFail;
    });
}

namespace {

struct BenchModeResult {
    std::string mode;
    std::vector<train::RunReportRow> rows; // epoch rows then one summary row
    std::int64_t trainable = 0;
    double final_val_acc = 0.0;
    double compute_ms = 0.0;
};

template <typename S>
nn::Model<S> bench_model(const ExperimentConfig& cfg, peft::LiftMode mode) {
    nn::Model<S> model = nn::load_checkpoint<S>(cfg.checkpoint_in.string());
    peft::AdapterConfig acfg = cfg.adapter;
    acfg.lift_mode = mode;
    Rng rng = Rng::derive(cfg.seed, 1);
    nn::attach_adapters(model, acfg, rng);
    return model;
}

template <typename S>
BenchModeResult run_bench_mode(const ExperimentConfig& cfg, peft::LiftMode mode) {
    nn::Model<S> model = bench_model<S>(cfg, mode);

    const auto [train_ds, val_ds] = data::generate<S>(cfg.task);
    train::FitOptions opt;
    opt.run_id = cfg.run_id + "-" + peft::lift_mode_name(mode);
    opt.seed = cfg.seed;
    opt.epochs = cfg.effective_epochs();
    opt.batch_size = cfg.batch_size;
    opt.optim = cfg.optim;
    opt.train_base = false;
    const train::FitResult res = train::fit(model, train_ds, val_ds, opt);

    BenchModeResult out;
    out.mode = peft::lift_mode_name(mode);
    out.rows = res.rows;
    out.trainable = nn::trainable_param_count(model);
    out.final_val_acc = res.final_val_acc;
    out.compute_ms = res.robust_compute_ms();
    return out;
}

// One optimizer step on a fixed batch; the work per step does not depend on
// the parameter values, so repeating it measures the mode's per-step cost.
template <typename S>
struct StepProbe {
    nn::Model<S> model;
    optim::TrainState<S> state;
    Tensor<S> batch;
    std::vector<int> labels;
    optim::OptimConfig optim;

    double timed_step() {
        const double start = train::thread_cpu_ms();
        autograd::Tape<S> tape;
        const nn::ForwardResult<S> fwd = nn::model_forward(model, tape, batch, false);
        const autograd::VarId loss = tape.softmax_xent(fwd.logits, labels);
        const autograd::GradMap<S> gm = tape.backward(loss);
        std::vector<std::pair<std::string, Tensor<S>>> params;
        std::map<std::string, Tensor<S>> grads;
        for (const auto& [name, id] : fwd.trainables) {
            params.emplace_back(name, tape.val(id));
            grads.emplace(name, gm.at(id.index));
        }
        nn::apply_updates(model, optim::step(state, optim, params, std::move(grads)));
        return train::thread_cpu_ms() - start;
    }
};

// Machine speed on a shared box drifts on a timescale of seconds, which
// swamps the few-percent cost difference between lift modes when each mode
// is timed as one long block. Interleaving single steps puts every sample of
// every mode in the same speed regime; rotating the within-round order keeps
// periodic scheduler ticks from always landing on the same mode. The trimmed
// mean of a mode's step times, scaled by the fit's step count, estimates the
// full-run compute cost.
constexpr int kBenchProbeWarmup = 40;
constexpr int kBenchProbeSamples = 800;

inline double trimmed_mean(std::vector<double> s) {
    std::sort(s.begin(), s.end());
    const std::size_t cut = s.size() / 5;
    double sum = 0.0;
    for (std::size_t i = cut; i < s.size() - cut; ++i) sum += s[i];
    return sum / static_cast<double>(s.size() - 2 * cut);
}

template <typename S>
std::vector<double> probe_step_costs(const ExperimentConfig& cfg,
                                     const std::vector<peft::LiftMode>& modes) {
    const auto [train_ds, val_ds] = data::generate<S>(cfg.task);
    const std::int64_t count = std::min<std::int64_t>(cfg.batch_size, train_ds.size());
    const Tensor<S> batch = train::slice_batch(train_ds.images, 0, count);
    const std::vector<int> labels(train_ds.labels.begin(), train_ds.labels.begin() + count);

    std::vector<StepProbe<S>> probes;
    for (peft::LiftMode mode : modes)
        probes.push_back({bench_model<S>(cfg, mode), {}, batch, labels, cfg.optim});

    std::vector<std::vector<double>> samples(modes.size());
    for (int k = 0; k < kBenchProbeWarmup + kBenchProbeSamples; ++k)
        for (std::size_t j = 0; j < modes.size(); ++j) {
            const std::size_t i = (j + static_cast<std::size_t>(k)) % modes.size();
            const double ms = probes[i].timed_step();
            if (k >= kBenchProbeWarmup) samples[i].push_back(ms);
        }

    std::vector<double> costs;
    for (auto& s : samples) costs.push_back(trimmed_mean(std::move(s)));
    return costs;
}

void append_summary_row(BenchModeResult& r, double per_step_ms, std::int64_t step_count) {
    r.compute_ms = per_step_ms * static_cast<double>(step_count);
    train::RunReportRow summary = r.rows.back();
    summary.epoch = -1; // summary marker
    summary.wall_ms = r.compute_ms;
    r.rows.push_back(summary);
}

int env_thread_cap() {
    const char* env = std::getenv("LIERA_LAB_THREADS");
    if (!env) {
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }
    const int v = std::atoi(env);
    if (v < 1) throw ConfigError("LIERA_LAB_THREADS must be a positive integer");
    return v;
}

template <typename S>
int do_bench(const ExperimentConfig& cfg, const std::vector<peft::LiftMode>& modes,
             const std::filesystem::path& out_csv, bool parallel) {
    if (cfg.checkpoint_in.empty()) throw ConfigError("bench requires checkpoint_in");

    std::vector<BenchModeResult> results(modes.size());
    std::vector<std::exception_ptr> errors(modes.size());

    if (parallel) {
        const int cap = env_thread_cap();
        std::size_t next = 0;
        while (next < modes.size()) {
            std::vector<std::thread> threads;
            const std::size_t batch_end = std::min(modes.size(), next + static_cast<std::size_t>(cap));
            for (std::size_t i = next; i < batch_end; ++i) {
                threads.emplace_back([&, i] {
                    try {
                        results[i] = run_bench_mode<S>(cfg, modes[i]);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                });
            }
            for (auto& t : threads) t.join();
            next = batch_end;
        }
    } else {
        for (std::size_t i = 0; i < modes.size(); ++i) {
            try {
                results[i] = run_bench_mode<S>(cfg, modes[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    const std::vector<double> per_step = probe_step_costs<S>(cfg, modes);
    const std::int64_t steps_per_epoch = (cfg.task.n_train + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t step_count = steps_per_epoch * cfg.effective_epochs();
    for (std::size_t i = 0; i < modes.size(); ++i)
        append_summary_row(results[i], per_step[i], step_count);

    std::vector<train::RunReportRow> rows;
    for (const BenchModeResult& r : results) rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    ensure_parent(out_csv);
    write_run_report(out_csv, rows);

    for (const BenchModeResult& r : results)
        std::cout << "bench " << r.mode << ": val_acc=" << format_number(r.final_val_acc)
                  << " wall_ms=" << format_number(r.compute_ms) << " trainable=" << r.trainable << "\n";

    const BenchModeResult* additive = nullptr;
    const BenchModeResult* taylor = nullptr;
    for (const BenchModeResult& r : results) {
        if (r.mode == "additive") additive = &r;
        if (r.mode == "lie_taylor") taylor = &r;
    }
    if (additive && taylor && additive->trainable != taylor->trainable) {
        std::cerr << "budget mismatch: additive " << additive->trainable << " vs lie_taylor "
                  << taylor->trainable << " trainable parameters\n";
        return kExitVerifyFail;
    }
    if (additive && taylor) std::cout << "bench budget equality: ok (" << additive->trainable << ")\n";
    return kExitOk;
}

} // namespace

int cmd_bench(const std::filesystem::path& config_path, const std::string& modes_csv,
              const std::filesystem::path& out_csv, bool parallel,
              std::optional<std::uint64_t> seed_override) {
    return run_guarded([&] {
        ExperimentConfig cfg = load_with_override(config_path, seed_override);
        if (out_csv.empty()) throw ConfigError("bench requires --out");

        std::vector<peft::LiftMode> modes;
        std::stringstream ss(modes_csv.empty() ? "additive,lie_taylor,lie_exact" : modes_csv);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) modes.push_back(peft::parse_lift_mode(item));
        }
        if (modes.empty()) throw ConfigError("bench: no modes given");

        return cfg.dtype == DType::F32 ? do_bench<float>(cfg, modes, out_csv, parallel)
                                       : do_bench<double>(cfg, modes, out_csv, parallel);
    });
}

} // namespace liera::cli
