#pragma once

// Minimal CSV for the library's own tables. Fields never contain commas,
// quotes or newlines.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "unitconcepts/errors.hpp"

namespace uc::detail {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw FormatError("missing CSV column '" + name + "'");
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty CSV: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto row = split_csv_line(line);
        if (row.size() != t.header.size())
            throw FormatError("CSV row has " + std::to_string(row.size()) + " fields, expected " +
                              std::to_string(t.header.size()) + ": " + path.string());
        t.rows.push_back(std::move(row));
    }
    return t;
}

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : out_(path) {
        if (!out_) throw IoError("cannot write " + path.string());
        row(header);
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << fields[i];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline std::uint64_t parse_u64(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        const auto v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(std::string("bad ") + what + " '" + s + "'");
    }
}

} // namespace uc::detail
