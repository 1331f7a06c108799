#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "upliftkit/errors.hpp"

namespace upliftkit::csv {

/// Decimal float with 17 significant digits: enough for an exact
/// double round-trip, per the dataset file contract.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& token, std::size_t row, const std::string& column);
long long parse_int(const std::string& token, std::size_t row, const std::string& column);

/// Splits one CSV line on commas. The toolkit's schemas never quote fields.
std::vector<std::string> split_line(const std::string& line);

/// Reads all non-empty lines. Tolerates a trailing newline and CRLF endings.
std::vector<std::string> read_lines(const std::string& path);

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

}  // namespace upliftkit::csv
