#include "upliftkit/csv.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace upliftkit::csv {

double parse_double(const std::string& token, std::size_t row, const std::string& column) {
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0' || errno == ERANGE) {
    throw DataError("row " + std::to_string(row) + ": column '" + column +
                    "' is not a number: '" + token + "'");
  }
  return v;
}

long long parse_int(const std::string& token, std::size_t row, const std::string& column) {
  errno = 0;
  char* end = nullptr;
  long long v = std::strtoll(token.c_str(), &end, 10);
  if (end == token.c_str() || *end != '\0' || errno == ERANGE) {
    throw DataError("row " + std::to_string(row) + ": column '" + column +
                    "' is not an integer: '" + token + "'");
  }
  return v;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace upliftkit::csv
