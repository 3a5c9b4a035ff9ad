#include "shiftkit/report.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

#include <json.hpp>

#include "shiftkit/error.hpp"

namespace shiftkit {

namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::string_view contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoFailure, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error(Errc::IoFailure, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(Errc::IoFailure, "cannot rename into " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::string format_optional(const std::optional<double>& value) {
  return value ? format_double(*value) : std::string();
}

double parse_double(std::string_view text) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(Errc::BadCsv, "not a number: '" + std::string(text) + "'");
  }
  return v;
}

std::optional<double> parse_optional_double(std::string_view text) {
  if (text.empty()) return std::nullopt;
  return parse_double(text);
}

void CsvTable::add_row(CsvRow row) {
  if (!header_.empty() && row.size() != header_.size()) {
    throw Error(Errc::BadCsv, "row has " + std::to_string(row.size()) + " fields, header has " +
                                  std::to_string(header_.size()));
  }
  rows_.push_back(std::move(row));
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (header_[i] == name) return i;
  }
  throw Error(Errc::BadCsv, "missing column '" + std::string(name) + "'");
}

namespace {

void append_field(std::string& out, const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) {
    out += field;
    return;
  }
  out += '"';
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
}

void append_record(std::string& out, const CsvRow& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ',';
    append_field(out, row[i]);
  }
  out += "\r\n";
}

}  // namespace

std::string CsvTable::to_string() const {
  std::string out;
  append_record(out, header_);
  for (const auto& row : rows_) append_record(out, row);
  return out;
}

CsvTable CsvTable::parse(std::string_view text) {
  std::vector<CsvRow> records;
  CsvRow row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t i = 0;
  auto end_record = [&] {
    row.push_back(std::move(field));
    field.clear();
    records.push_back(std::move(row));
    row.clear();
    field_started = false;
  };
  while (i < text.size()) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          i += 2;
          continue;
        }
        in_quotes = false;
      } else {
        field += c;
      }
      ++i;
      continue;
    }
    if (c == '"') {
      if (!field.empty()) throw Error(Errc::BadCsv, "quote inside unquoted field");
      in_quotes = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = true;
    } else if (c == '\r' || c == '\n') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      end_record();
    } else {
      field += c;
      field_started = true;
    }
    ++i;
  }
  if (in_quotes) throw Error(Errc::BadCsv, "unterminated quoted field");
  if (field_started || !row.empty()) end_record();
  if (records.empty()) throw Error(Errc::BadCsv, "empty table");

  CsvTable table(std::move(records.front()));
  for (std::size_t r = 1; r < records.size(); ++r) table.add_row(std::move(records[r]));
  return table;
}

void write_csv(const fs::path& path, const CsvTable& table) {
  write_file_atomic(path, table.to_string());
}

CsvTable read_csv(const fs::path& path) { return CsvTable::parse(read_file(path)); }

std::string table_to_json(const CsvTable& table) {
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const auto& row : table.rows()) {
    nlohmann::ordered_json rec = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::string& key = i < table.header().size() ? table.header()[i] : std::to_string(i);
      const std::string& field = row[i];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (field.empty()) {
        rec[key] = nullptr;
      } else if (ec == std::errc() && ptr == field.data() + field.size() && std::isfinite(v)) {
        rec[key] = v;
      } else {
        rec[key] = field;
      }
    }
    records.push_back(std::move(rec));
  }
  return records.dump(2) + "\n";
}

void write_table(const fs::path& dir, const std::string& stem, const CsvTable& table) {
  write_csv(dir / (stem + ".csv"), table);
  write_file_atomic(dir / (stem + ".json"), table_to_json(table));
}

}  // namespace shiftkit
