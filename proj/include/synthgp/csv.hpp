#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace synthgp::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a header column, or -1.
  [[nodiscard]] int column(std::string_view name) const;
};

// RFC 4180-ish reader: comma separated, double-quoted fields may contain
// commas and doubled quotes. A UTF-8 BOM on the first line is skipped.
Table read(const std::filesystem::path& path);
Table parse(std::istream& in);

std::vector<std::string> split_line(std::string_view line);

// Shortest text that parses back to exactly the same double.
std::string format_double(double value);

// Quotes a field if it contains a comma, quote, or newline.
std::string escape(std::string_view field);

}  // namespace synthgp::csv
