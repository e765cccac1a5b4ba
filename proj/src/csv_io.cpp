#include "otneg/csv_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace otneg {

namespace {

std::string trim(const std::string& s) {
  auto begin = std::find_if_not(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
  auto end = std::find_if_not(s.rbegin(), s.rend(), [](unsigned char c) { return std::isspace(c); });
  if (begin >= end.base()) return {};
  return std::string(begin, end.base());
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

CsvTable read_csv(const std::string& path, bool has_header) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  bool header_pending = has_header;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line[0] == '#') continue;
    if (header_pending) {
      table.header = split(line);
      header_pending = false;
      continue;
    }
    table.rows.push_back(split(line));
  }
  return table;
}

double parse_double(const std::string& raw) {
  const auto begin = raw.find_first_not_of(" \t\r");
  const std::string field =
      begin == std::string::npos ? std::string() : raw.substr(begin, raw.find_last_not_of(" \t\r") - begin + 1);
  std::string lower;
  for (char c : field) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "inf" || lower == "+inf" || lower == "infinity" || lower == "+infinity")
    return std::numeric_limits<double>::infinity();
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && field[0] == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  require(ec == std::errc() && ptr == last, ErrorKind::Io, "not a number: '" + field + "'");
  return value;
}

Matrix read_matrix_csv(const std::string& path) {
  const CsvTable table = read_csv(path, false);
  require(!table.rows.empty(), ErrorKind::Io, "'" + path + "' holds no rows");
  const std::size_t width = table.rows.front().size();
  Matrix out(table.rows.size(), width);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    require(table.rows[r].size() == width, ErrorKind::Io,
            "ragged row " + std::to_string(r) + " in '" + path + "'");
    for (std::size_t c = 0; c < width; ++c) out(r, c) = parse_double(table.rows[r][c]);
  }
  return out;
}

void write_matrix_csv(std::ostream& out, const Matrix& values, int significant_digits) {
  out << std::setprecision(significant_digits);
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      if (c) out << ',';
      out << values(r, c);
    }
    out << '\n';
  }
}

void write_matrix_csv(const std::string& path, const Matrix& values, int significant_digits) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write '" + path + "'");
  write_matrix_csv(out, values, significant_digits);
}

std::string format_exact(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

}  // namespace otneg
