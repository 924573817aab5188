#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "rfgap/dataset.hpp"

namespace rfgap {

/// Parse comma-separated text. First line is the header; '\r' is stripped so
/// CRLF files load cleanly. Cells are kept verbatim (trimming happens at
/// encode time). Blank lines are skipped.
inline RawTable parse_csv(std::istream& in) {
    RawTable raw;
    std::string line;
    bool have_header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            if (comma == std::string::npos) {
                cells.push_back(line.substr(start));
                break;
            }
            cells.push_back(line.substr(start, comma - start));
            start = comma + 1;
        }
        if (!have_header) {
            raw.header = std::move(cells);
            have_header = true;
        } else {
            raw.rows.push_back(std::move(cells));
        }
    }
    if (!have_header) throw std::runtime_error("empty CSV: no header row");
    return raw;
}

inline RawTable read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    return parse_csv(in);
}

/// Load a labeled table: infer the schema from the file (training vocabulary)
/// and encode it. Rows with missing or non-finite cells are dropped and
/// counted in Dataset::dropped_rows.
inline Dataset load_csv(const std::string& path, const std::string& target_column,
                        const std::string& timestamp_column = "") {
    const RawTable raw = read_csv_file(path);
    const TableSchema schema = infer_schema(raw, target_column, timestamp_column);
    return encode_with(schema, raw, /*build_vocabulary=*/true);
}

inline void write_csv(std::ostream& out, const RawTable& raw) {
    for (std::size_t c = 0; c < raw.header.size(); ++c)
        out << (c ? "," : "") << raw.header[c];
    out << '\n';
    for (const auto& row : raw.rows) {
        for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << row[c];
        out << '\n';
    }
}

inline void write_csv_file(const std::string& path, const RawTable& raw) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    write_csv(out, raw);
}

inline void write_dataset_csv(const std::string& path, const Dataset& ds) {
    write_csv_file(path, decode_to_text(ds));
}

} // namespace rfgap
