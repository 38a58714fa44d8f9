// Batch front end: data generation, training phases, verification suites,
// and the lift-mode comparison bench. Every command is config-driven and
// exits 0 ok / 1 verification failure / 2 config / 3 I/O / 4 numeric.

#include <cstdint>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"desk-scale adapter fine-tuning laboratory"};
    app.require_subcommand(1);

    std::string config;
    std::string out;
    std::string suite = "all";
    std::string modes;
    bool parallel = false;
    std::optional<std::uint64_t> seed;
    std::uint64_t verify_seed = 1;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "override the config seed");
    };

    CLI::App* gen = app.add_subcommand("gen_data", "write train/val datasets for a task");
    gen->add_option("--config", config, "experiment config (JSON)")->required();
    gen->add_option("--out", out, "output directory")->required();
    add_seed(gen);

    CLI::App* pre = app.add_subcommand("pretrain", "train a model from scratch");
    pre->add_option("--config", config, "experiment config (JSON)")->required();
    add_seed(pre);

    CLI::App* fin = app.add_subcommand("finetune", "train adapters on a frozen checkpoint");
    fin->add_option("--config", config, "experiment config (JSON)")->required();
    add_seed(fin);

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a task");
    ev->add_option("--config", config, "experiment config (JSON)")->required();
    add_seed(ev);

    CLI::App* ver = app.add_subcommand("verify", "run verification suites");
    ver->add_option("--suite", suite, "group, grad, rank, taylor, format, or all");
    ver->add_option("--out", out, "report directory")->required();
    ver->add_option("--seed", verify_seed, "seed for randomized checks");

    CLI::App* bench = app.add_subcommand("bench", "compare lift modes on one fine-tune setup");
    bench->add_option("--config", config, "experiment config (JSON)")->required();
    bench->add_option("--modes", modes, "comma-separated lift modes (default: all three)");
    bench->add_option("--out", out, "comparison CSV path")->required();
    bench->add_flag("--parallel", parallel, "run modes in concurrent workers");
    add_seed(bench);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : liera::cli::kExitConfig;
    }

    if (gen->parsed()) return liera::cli::cmd_gen_data(config, out, seed);
    if (pre->parsed()) return liera::cli::cmd_pretrain(config, seed);
    if (fin->parsed()) return liera::cli::cmd_finetune(config, seed);
    if (ev->parsed()) return liera::cli::cmd_eval(config, seed);
    if (ver->parsed()) return liera::cli::cmd_verify(suite, out, verify_seed);
    if (bench->parsed()) return liera::cli::cmd_bench(config, modes, out, parallel, seed);
    return liera::cli::kExitConfig;
}
