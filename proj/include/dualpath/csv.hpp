#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dualpath {

// Minimal RFC 4180 reader/writer: comma separated, optional double quotes,
// "" escapes a quote inside a quoted field. Records do not span lines.
std::vector<std::string> parse_csv_line(std::string_view line);
// Quotes only when the field contains a comma, quote or leading/trailing space.
std::string csv_field(std::string_view value);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws FormatError when absent.
  std::size_t column(std::string_view name) const;
};

// Throws FormatError when a row's width differs from the header or the
// header does not equal `expected_header` (if non-empty).
CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_header = {});

}  // namespace dualpath
