#pragma once

// Command entry points shared by the CLI binary and the test suites. Each
// returns a process exit code instead of throwing: 0 ok, 1 verification
// failure, 2 config, 3 I/O, 4 numeric.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace liera::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFail = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

int cmd_gen_data(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                 std::optional<std::uint64_t> seed_override = std::nullopt);
int cmd_pretrain(const std::filesystem::path& config_path,
                 std::optional<std::uint64_t> seed_override = std::nullopt);
int cmd_finetune(const std::filesystem::path& config_path,
                 std::optional<std::uint64_t> seed_override = std::nullopt);
int cmd_eval(const std::filesystem::path& config_path,
             std::optional<std::uint64_t> seed_override = std::nullopt);

// suite: group, grad, rank, taylor, format, or all.
int cmd_verify(const std::string& suite, const std::filesystem::path& out_dir, std::uint64_t seed = 1);

int cmd_bench(const std::filesystem::path& config_path, const std::string& modes_csv,
              const std::filesystem::path& out_csv, bool parallel = false,
              std::optional<std::uint64_t> seed_override = std::nullopt);

} // namespace liera::cli
