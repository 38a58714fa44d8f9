#pragma once

// CSV report writers and schema checks. Numbers are rendered with
// shortest-round-trip formatting, so identical values always produce
// identical bytes and seeded reruns diff clean.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "liera/train.hpp"

namespace liera::cli {

inline constexpr const char* kRunReportHeader =
    "run_id,seed,lift_mode,rank,alpha,trainable_params,total_params,epoch,train_loss,val_loss,val_acc,"
    "wall_ms";

inline constexpr const char* kVerifyHeader = "suite,check,comparator,value,threshold,pass";

std::string format_number(double v);

std::string run_report_csv(const std::vector<train::RunReportRow>& rows);
void write_run_report(const std::filesystem::path& path, const std::vector<train::RunReportRow>& rows);

struct VerifyRow {
    std::string suite;
    std::string check;
    std::string comparator; // "le", "ge", "eq" against threshold
    double value = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

std::string verify_csv(const std::vector<VerifyRow>& rows);
void write_verify_report(const std::filesystem::path& path, const std::vector<VerifyRow>& rows);

// Throw IoError unless the file exists and matches the report schema.
void validate_run_report_file(const std::filesystem::path& path);
void validate_verify_file(const std::filesystem::path& path);

} // namespace liera::cli
