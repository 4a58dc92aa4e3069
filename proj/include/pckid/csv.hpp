#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pckid/errors.hpp"
#include "pckid/incomplete_matrix.hpp"

namespace pckid {

namespace detail {

inline std::string_view trim(std::string_view s) {
    const char* ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline double parse_double(std::string_view cell, std::size_t line_no) {
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw ParseError("line " + std::to_string(line_no) + ": cell '" + std::string(cell) +
                         "' is not numeric");
    }
    return value;
}

}  // namespace detail

/// Reads a rectangular numeric CSV. Cells equal to `missing_token` (or empty)
/// are missing. Line numbers in errors are 1-based and count the header.
inline IncompleteMatrix load_csv(const std::string& path, const std::string& missing_token = "",
                                 bool has_header = false) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open CSV file: " + path);
    std::vector<std::vector<double>> rows;
    std::vector<std::vector<bool>> masks;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (has_header && line_no == 1) continue;
        if (detail::trim(line).empty() && rows.empty()) continue;  // leading blank lines
        if (detail::trim(line).empty()) break;                     // trailing blank line ends data
        const auto fields = detail::split_fields(line);
        if (width == 0) width = fields.size();
        if (fields.size() != width) {
            throw ParseError("line " + std::to_string(line_no) + ": has " +
                             std::to_string(fields.size()) + " cells, expected " + std::to_string(width));
        }
        std::vector<double> vals(width);
        std::vector<bool> obs(width);
        for (std::size_t j = 0; j < width; ++j) {
            const auto cell = detail::trim(fields[j]);
            if (cell.empty() || cell == missing_token) {
                vals[j] = missing_placeholder();
                obs[j] = false;
            } else {
                vals[j] = detail::parse_double(cell, line_no);
                obs[j] = true;
            }
        }
        rows.push_back(std::move(vals));
        masks.push_back(std::move(obs));
    }
    if (rows.empty()) throw ParseError("CSV file has no data rows: " + path);
    IncompleteMatrix m;
    m.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
    m.mask.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            m.values(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            m.mask(i, j) = masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        }
    }
    return m;
}

namespace detail {
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

/// Writes a complete matrix as CSV with round-trip precision.
inline void write_csv(const Eigen::MatrixXd& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << detail::format_double(m(i, j));
        }
        out << '\n';
    }
}

/// Writes values with `missing_token` in unobserved cells.
inline void write_incomplete_csv(const IncompleteMatrix& data, const std::string& path,
                                 const std::string& missing_token = "") {
    data.require_consistent();
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    for (Index i = 0; i < data.rows(); ++i) {
        for (Index j = 0; j < data.cols(); ++j) {
            if (j) out << ',';
            if (data.mask(i, j)) {
                out << detail::format_double(data.values(i, j));
            } else {
                out << missing_token;
            }
        }
        out << '\n';
    }
}

/// 0/1 mask export for audits (1 = observed).
inline void write_mask_csv(const BoolMatrix& mask, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    for (Index i = 0; i < mask.rows(); ++i) {
        for (Index j = 0; j < mask.cols(); ++j) {
            if (j) out << ',';
            out << (mask(i, j) ? '1' : '0');
        }
        out << '\n';
    }
}

/// Single-column CSV of nonnegative integer labels.
inline std::vector<int> load_label_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open label file: " + path);
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto cell = detail::trim(line);
        if (cell.empty()) continue;
        int v = 0;
        const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc() || ptr != cell.data() + cell.size() || v < 0) {
            throw ParseError("line " + std::to_string(line_no) + ": '" + std::string(cell) +
                             "' is not a nonnegative integer label");
        }
        labels.push_back(v);
    }
    if (labels.empty()) throw ParseError("label file has no rows: " + path);
    return labels;
}

inline void write_label_csv(const std::vector<int>& labels, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open file for writing: " + path);
    for (int v : labels) out << v << '\n';
}

}  // namespace pckid
