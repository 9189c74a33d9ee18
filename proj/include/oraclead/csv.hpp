#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oraclead/series.hpp"

namespace oraclead {

/// Parse a comma-separated numeric file. Every row must have the same number
/// of finite values; errors name the offending row/column (1-based).
RawSeries load_csv(const std::string& path, bool has_header);

/// Label file: one 0/1 value per line.
std::vector<std::uint8_t> load_labels(const std::string& path);

void write_csv(const std::string& path, const Mat& values, const std::vector<std::string>& header);
void write_labels(const std::string& path, const std::vector<std::uint8_t>& labels);

/// Shortest decimal form that parses back to the exact same double.
std::string format_double(double x);

}  // namespace oraclead
