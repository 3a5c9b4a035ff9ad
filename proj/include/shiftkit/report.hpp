#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace shiftkit {

/// Writes `contents` to a sibling temp file and renames it over `path`, so a
/// reader never observes a partially written output.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
std::string format_optional(const std::optional<double>& value);

using CsvRow = std::vector<std::string>;

/// RFC-4180 table: fields containing comma, quote, CR or LF are quoted and
/// embedded quotes doubled; records end with CRLF.
class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(CsvRow header) : header_(std::move(header)) {}

  void add_row(CsvRow row);
  const CsvRow& header() const { return header_; }
  const std::vector<CsvRow>& rows() const { return rows_; }
  std::size_t column(std::string_view name) const;

  std::string to_string() const;
  static CsvTable parse(std::string_view text);

  friend bool operator==(const CsvTable&, const CsvTable&) = default;

 private:
  CsvRow header_;
  std::vector<CsvRow> rows_;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

/// JSON array of records keyed by header; numeric fields become numbers and
/// empty fields null.
std::string table_to_json(const CsvTable& table);

/// Writes `<stem>.csv` and `<stem>.json` under `dir`.
void write_table(const std::filesystem::path& dir, const std::string& stem, const CsvTable& table);

double parse_double(std::string_view text);
std::optional<double> parse_optional_double(std::string_view text);

}  // namespace shiftkit
