#include "report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "liera/error.hpp"
#include "liera/io.hpp"

namespace liera::cli {

std::string format_number(double v) {
    if (!std::isfinite(v)) throw NumericError("report value is not finite");
    if (v == static_cast<double>(static_cast<std::int64_t>(v)) && std::abs(v) < 1e15)
        return std::to_string(static_cast<std::int64_t>(v));
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

std::string csv_field(const std::string& s) {
    for (char c : s)
        if (c == ',' || c == '"' || c == '\n' || c == '\r')
            throw IoError("report field contains a CSV delimiter: \"" + s + "\"");
    return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

bool parse_number(const std::string& s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    const auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

} // namespace

std::string run_report_csv(const std::vector<train::RunReportRow>& rows) {
    std::ostringstream out;
    out << kRunReportHeader << "\n";
    for (const auto& r : rows) {
        out << csv_field(r.run_id) << "," << r.seed << "," << csv_field(r.lift_mode) << "," << r.rank << ","
            << format_number(r.alpha) << "," << r.trainable_params << "," << r.total_params << "," << r.epoch
            << "," << format_number(r.train_loss) << "," << format_number(r.val_loss) << ","
            << format_number(r.val_acc) << "," << format_number(r.wall_ms) << "\n";
    }
    return out.str();
}

void write_run_report(const std::filesystem::path& path, const std::vector<train::RunReportRow>& rows) {
    const std::string text = run_report_csv(rows);
    io::atomic_write_file(path, io::Bytes(text.begin(), text.end()));
}

std::string verify_csv(const std::vector<VerifyRow>& rows) {
    std::ostringstream out;
    out << kVerifyHeader << "\n";
    for (const auto& r : rows) {
        out << csv_field(r.suite) << "," << csv_field(r.check) << "," << csv_field(r.comparator) << ","
            << format_number(r.value) << "," << format_number(r.threshold) << "," << (r.pass ? 1 : 0)
            << "\n";
    }
    return out.str();
}

void write_verify_report(const std::filesystem::path& path, const std::vector<VerifyRow>& rows) {
    const std::string text = verify_csv(rows);
    io::atomic_write_file(path, io::Bytes(text.begin(), text.end()));
}

void validate_run_report_file(const std::filesystem::path& path) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty() || lines[0] != kRunReportHeader)
        throw IoError(path.string() + ": run report header mismatch");
    const std::size_t n_cols = split_csv_line(kRunReportHeader).size();
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty() && i + 1 == lines.size()) break;
        const std::vector<std::string> fields = split_csv_line(lines[i]);
        if (fields.size() != n_cols)
            throw IoError(path.string() + ": row " + std::to_string(i) + " has " +
                          std::to_string(fields.size()) + " fields, expected " + std::to_string(n_cols));
        // Columns after lift_mode are numeric.
        double v;
        for (std::size_t c = 3; c < fields.size(); ++c)
            if (!parse_number(fields[c], v))
                throw IoError(path.string() + ": row " + std::to_string(i) + " field " + std::to_string(c) +
                              " is not numeric: \"" + fields[c] + "\"");
        if (!parse_number(fields[1], v))
            throw IoError(path.string() + ": row " + std::to_string(i) + " seed is not numeric");
    }
}

void validate_verify_file(const std::filesystem::path& path) {
    const std::vector<std::string> lines = read_lines(path);
    if (lines.empty() || lines[0] != kVerifyHeader)
        throw IoError(path.string() + ": verify report header mismatch");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty() && i + 1 == lines.size()) break;
        const std::vector<std::string> fields = split_csv_line(lines[i]);
        if (fields.size() != 6)
            throw IoError(path.string() + ": row " + std::to_string(i) + " has " +
                          std::to_string(fields.size()) + " fields, expected 6");
        double v;
        if (!parse_number(fields[3], v) || !parse_number(fields[4], v))
            throw IoError(path.string() + ": row " + std::to_string(i) + " has non-numeric value/threshold");
        if (fields[5] != "0" && fields[5] != "1")
            throw IoError(path.string() + ": row " + std::to_string(i) + " pass flag must be 0 or 1");
    }
}

} // namespace liera::cli
