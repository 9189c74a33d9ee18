#include "oraclead/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace oraclead {

namespace {

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

double parse_cell(const std::string& cell, std::size_t row, std::size_t col) {
    const std::string t = trim(cell);
    double value = 0.0;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || t.empty())
        throw std::invalid_argument("csv: cannot parse '" + cell + "' at row " + std::to_string(row) +
                                    ", column " + std::to_string(col));
    if (!std::isfinite(value))
        throw std::invalid_argument("csv: non-finite value at row " + std::to_string(row) + ", column " +
                                    std::to_string(col));
    return value;
}

}  // namespace

RawSeries load_csv(const std::string& path, bool has_header) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("csv: cannot open " + path);

    RawSeries out;
    std::string line;
    std::vector<std::vector<double>> rows;
    std::size_t line_no = 0;
    bool header_pending = has_header;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_commas(line);
        if (header_pending) {
            for (const auto& c : cells) out.variable_names.push_back(trim(c));
            header_pending = false;
            continue;
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) row.push_back(parse_cell(cells[c], line_no, c + 1));
        if (!rows.empty() && row.size() != rows.front().size())
            throw std::invalid_argument("csv: ragged row " + std::to_string(line_no) + " has " +
                                        std::to_string(row.size()) + " cells, expected " +
                                        std::to_string(rows.front().size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::invalid_argument("csv: no data rows in " + path);

    const std::size_t n = rows.front().size();
    if (!out.variable_names.empty() && out.variable_names.size() != n)
        throw std::invalid_argument("csv: header has " + std::to_string(out.variable_names.size()) +
                                    " names but rows have " + std::to_string(n) + " columns");
    if (out.variable_names.empty())
        for (std::size_t i = 0; i < n; ++i) out.variable_names.push_back("var_" + std::to_string(i));

    out.values = Mat(rows.size(), n);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < n; ++c) out.values.at(r, c) = rows[r][c];
    return out;
}

std::vector<std::uint8_t> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("labels: cannot open " + path);
    std::vector<std::uint8_t> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t == "0")
            out.push_back(0);
        else if (t == "1")
            out.push_back(1);
        else
            throw std::invalid_argument("labels: expected 0 or 1 at line " + std::to_string(line_no) +
                                        ", got '" + t + "'");
    }
    if (out.empty()) throw std::invalid_argument("labels: no data rows in " + path);
    return out;
}

std::string format_double(double x) {
    char buf[40];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    (void)ec;
    return std::string(buf, ptr);
}

void write_csv(const std::string& path, const Mat& values, const std::vector<std::string>& header) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("csv: cannot write " + path);
    if (!header.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c) out << ',';
            out << header[c];
        }
        out << '\n';
    }
    for (std::size_t r = 0; r < values.rows; ++r) {
        for (std::size_t c = 0; c < values.cols; ++c) {
            if (c) out << ',';
            out << format_double(values.at(r, c));
        }
        out << '\n';
    }
}

void write_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("labels: cannot write " + path);
    for (const auto v : labels) out << (v ? '1' : '0') << '\n';
}

}  // namespace oraclead
