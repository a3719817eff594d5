#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace odcast {

/// One parsed delimited-text file: a header row plus data rows, all fields
/// kept as trimmed strings. line numbers are 1-based file positions used
/// in error messages.
struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<size_t> line_numbers;

  /// Column position for a header name; throws DataError if absent.
  size_t column(const std::string& name) const;
};

/// Splits one line on commas and trims surrounding whitespace. No quoting:
/// none of the formats this project reads or writes embeds commas in
/// fields.
std::vector<std::string> split_csv_line(const std::string& line);

/// Reads a comma-separated file with a mandatory header row. Blank lines
/// are skipped. Rows are kept whatever their field count; callers decide
/// whether a ragged row is fatal (zone tables) or merely rejected with its
/// line number (trip files).
CsvFile read_csv(const std::filesystem::path& path);

}  // namespace odcast
