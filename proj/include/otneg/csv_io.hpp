#ifndef OTNEG_CSV_IO_HPP_
#define OTNEG_CSV_IO_HPP_

#include <iosfwd>
#include <string>
#include <vector>

#include "otneg/common.hpp"

namespace otneg {

struct CsvTable {
  std::vector<std::string> header;  // empty when the file has none
  std::vector<std::vector<std::string>> rows;
};

// Lines starting with '#' are skipped. If has_header is set the first
// remaining line becomes the header.
CsvTable read_csv(const std::string& path, bool has_header);

// Parses "inf"/"+inf"/"infinity" (any case) to +infinity.
double parse_double(const std::string& field);

// Dense numeric matrix; every row must have the same width.
Matrix read_matrix_csv(const std::string& path);

// Writes with the given number of significant digits.
void write_matrix_csv(std::ostream& out, const Matrix& values, int significant_digits);
void write_matrix_csv(const std::string& path, const Matrix& values, int significant_digits);

// Shortest text that reads back to the same double.
std::string format_exact(double value);

}  // namespace otneg

#endif  // OTNEG_CSV_IO_HPP_
