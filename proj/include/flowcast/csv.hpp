#pragma once

#include <string>
#include <vector>

namespace flowcast {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index for a header name; throws SchemaError naming the file.
  std::size_t column(const std::string& name, const std::string& file) const;
};

// Reads a UTF-8 comma-separated file with a mandatory header row. No quoting
// support; fields must not contain commas. Blank lines are skipped.
CsvTable read_csv(const std::string& path);

void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Round-trip safe double formatting (%.17g trimmed).
std::string format_double(double v);

double parse_double(const std::string& s, const std::string& context);
long long parse_int(const std::string& s, const std::string& context);

}  // namespace flowcast
