#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promptvar/error.hpp"
#include "promptvar/hash.hpp"
#include "promptvar/text.hpp"

namespace promptvar {

enum class DataFormat { csv, json, jsonl };

inline DataFormat parse_data_format(std::string_view name) {
  const auto n = text::lower(name);
  if (n == "csv") return DataFormat::csv;
  if (n == "json") return DataFormat::json;
  if (n == "jsonl" || n == "ndjson") return DataFormat::jsonl;
  throw ConfigError("unknown data format '" + std::string(name) + "' (expected csv, json or jsonl)");
}

inline std::string to_string(DataFormat f) {
  switch (f) {
    case DataFormat::csv: return "csv";
    case DataFormat::json: return "json";
    case DataFormat::jsonl: return "jsonl";
  }
  return "csv";
}

enum class ColumnKind { text, list, number };

inline std::string to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::text: return "text";
    case ColumnKind::list: return "list";
    case ColumnKind::number: return "number";
  }
  return "text";
}

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::text;
  // Item delimiter for list columns.
  std::string delimiter = ",";

  bool operator==(const ColumnSpec&) const = default;
};

struct Record {
  std::size_t row_index = 0;
  std::map<std::string, std::string> values;

  const std::string& at(const std::string& column) const {
    const auto it = values.find(column);
    if (it == values.end()) throw ConfigError("record " + std::to_string(row_index) + " has no column '" + column + "'");
    return it->second;
  }

  bool operator==(const Record&) const = default;
};

// Splits a raw list cell into trimmed items.
inline std::vector<std::string> split_list_cell(std::string_view cell, std::string_view delimiter) {
  std::vector<std::string> items;
  for (auto& part : text::split(cell, delimiter)) items.emplace_back(text::trim(part));
  return items;
}

// Immutable tabular dataset. Cells are kept as raw text exactly as read.
class DatasetTable {
 public:
  DatasetTable() = default;

  DatasetTable(std::string id, std::vector<ColumnSpec> columns, std::vector<Record> rows)
      : id_(std::move(id)), columns_(std::move(columns)), rows_(std::move(rows)) {
    check();
  }

  const std::string& id() const noexcept { return id_; }
  const std::vector<ColumnSpec>& columns() const noexcept { return columns_; }
  const std::vector<Record>& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }
  const Record& row(std::size_t i) const { return rows_.at(i); }

  std::vector<std::string> column_names() const {
    std::vector<std::string> names;
    names.reserve(columns_.size());
    for (const auto& c : columns_) names.push_back(c.name);
    return names;
  }

  const ColumnSpec* find_column(std::string_view name) const noexcept {
    for (const auto& c : columns_)
      if (c.name == name) return &c;
    return nullptr;
  }

  bool has_column(std::string_view name) const noexcept { return find_column(name) != nullptr; }

  // Returns a copy of the table with `name` declared as a list column.
  DatasetTable with_list_column(const std::string& name, std::string delimiter = ",") const {
    if (delimiter.empty()) throw ConfigError("list delimiter for column '" + name + "' must not be empty");
    DatasetTable copy = *this;
    bool found = false;
    for (auto& c : copy.columns_) {
      if (c.name != name) continue;
      c.kind = ColumnKind::list;
      c.delimiter = std::move(delimiter);
      found = true;
    }
    if (!found) throw ConfigError("cannot declare list column '" + name + "': no such column");
    copy.check();
    return copy;
  }

  DatasetTable with_id(std::string id) const {
    DatasetTable copy = *this;
    copy.id_ = std::move(id);
    return copy;
  }

  bool operator==(const DatasetTable& other) const {
    return columns_ == other.columns_ && rows_ == other.rows_;
  }

 private:
  void check() const {
    std::set<std::string> seen;
    for (const auto& c : columns_) {
      if (c.name.empty()) throw ParseError("column names must be non-empty");
      if (!seen.insert(c.name).second) throw ParseError("duplicate column name '" + c.name + "'");
    }
    if (rows_.empty()) throw ParseError("dataset has zero rows");
    std::set<std::size_t> indices;
    for (const auto& r : rows_) {
      if (!indices.insert(r.row_index).second)
        throw ParseError("duplicate row index " + std::to_string(r.row_index));
      if (r.values.size() != columns_.size())
        throw ParseError("row " + std::to_string(r.row_index) + " does not have a value for every column");
      for (const auto& c : columns_) {
        const auto it = r.values.find(c.name);
        if (it == r.values.end())
          throw ParseError("row " + std::to_string(r.row_index) + " is missing column '" + c.name + "'");
        if (c.kind == ColumnKind::list) {
          const auto items = split_list_cell(it->second, c.delimiter);
          const bool any = std::any_of(items.begin(), items.end(), [](const auto& s) { return !s.empty(); });
          if (!any)
            throw ParseError("list column '" + c.name + "' has no items in row " + std::to_string(r.row_index));
        }
      }
    }
  }

  std::string id_;
  std::vector<ColumnSpec> columns_;
  std::vector<Record> rows_;
};

struct LoadOptions {
  std::size_t max_bytes = 100ull * 1024 * 1024;
  // Empty: derived from a digest of the content.
  std::string id;
};

namespace detail {

inline std::vector<std::vector<std::string>> parse_csv_records(std::string_view in, std::vector<std::size_t>& start_lines) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> fields;
  std::string field;
  std::size_t i = 0;
  std::size_t line = 1;
  std::size_t record_line = 1;
  bool record_started = false;  // distinguishes `""` (one empty field) from a blank line
  bool field_consumed = false;

  auto end_record = [&] {
    if (record_started) {
      fields.push_back(std::move(field));
      records.push_back(std::move(fields));
      start_lines.push_back(record_line);
    }
    fields.clear();
    field.clear();
    record_started = false;
    field_consumed = false;
  };

  while (i < in.size()) {
    const char c = in[i];
    if (c == '"' && !field_consumed) {
      record_started = true;
      field_consumed = true;
      const std::size_t open_line = line;
      ++i;
      bool closed = false;
      while (i < in.size()) {
        if (in[i] == '"') {
          if (i + 1 < in.size() && in[i + 1] == '"') {
            field.push_back('"');
            i += 2;
            continue;
          }
          ++i;
          closed = true;
          break;
        }
        if (in[i] == '\n') ++line;
        field.push_back(in[i]);
        ++i;
      }
      if (!closed) throw ParseError("CSV line " + std::to_string(open_line) + ": unterminated quoted field");
      const bool at_boundary = i >= in.size() || in[i] == ',' || in[i] == '\n' ||
                               (in[i] == '\r' && i + 1 < in.size() && in[i + 1] == '\n');
      if (!at_boundary)
        throw ParseError("CSV line " + std::to_string(line) + ": unexpected character after closing quote");
      continue;
    }
    if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      record_started = true;
      field_consumed = false;
      ++i;
      continue;
    }
    if (c == '\r' && i + 1 < in.size() && in[i + 1] == '\n') {
      ++i;
      continue;
    }
    if (c == '\n') {
      end_record();
      ++line;
      record_line = line;
      ++i;
      continue;
    }
    if (c == '"') throw ParseError("CSV line " + std::to_string(line) + ": stray quote inside unquoted field");
    field.push_back(c);
    record_started = true;
    field_consumed = true;
    ++i;
  }
  end_record();
  return records;
}

// SAX builder that keeps floating-point numbers as their source spelling so
// cells survive ingestion byte-for-byte.
class RawNumberDomBuilder : public nlohmann::json_sax<nlohmann::ordered_json> {
 public:
  using json = nlohmann::ordered_json;

  bool null() override { return put(json(nullptr)); }
  bool boolean(bool v) override { return put(json(v)); }
  bool number_integer(number_integer_t v) override { return put(json(v)); }
  bool number_unsigned(number_unsigned_t v) override { return put(json(v)); }
  bool number_float(number_float_t, const string_t& raw) override { return put(json(raw)); }
  bool string(string_t& v) override { return put(json(v)); }
  bool binary(binary_t&) override { return put(json(nullptr)); }
  bool start_object(std::size_t) override {
    stack_.push_back(json::object());
    return true;
  }
  bool key(string_t& k) override {
    if (stack_.back().contains(k)) {
      duplicate_key_ = k;
      return false;
    }
    keys_.push_back(k);
    return true;
  }
  bool end_object() override { return close(); }
  bool start_array(std::size_t) override {
    stack_.push_back(json::array());
    return true;
  }
  bool end_array() override { return close(); }
  bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception& ex) override {
    error_ = ex.what();
    return false;
  }

  json result;
  std::string error_;
  std::string duplicate_key_;

 private:
  bool put(json v) {
    if (stack_.empty()) {
      result = std::move(v);
    } else if (stack_.back().is_array()) {
      stack_.back().push_back(std::move(v));
    } else {
      stack_.back()[keys_.back()] = std::move(v);
      keys_.pop_back();
    }
    return true;
  }
  bool close() {
    json v = std::move(stack_.back());
    stack_.pop_back();
    return put(std::move(v));
  }

  std::vector<json> stack_;
  std::vector<std::string> keys_;
};

inline nlohmann::ordered_json parse_json_raw_numbers(std::string_view content, const std::string& where) {
  RawNumberDomBuilder builder;
  const bool ok = nlohmann::ordered_json::sax_parse(content, &builder);
  if (!ok) {
    if (!builder.duplicate_key_.empty())
      throw ParseError(where + ": duplicate column name '" + builder.duplicate_key_ + "'");
    throw ParseError(where + ": malformed JSON: " + builder.error_);
  }
  return std::move(builder.result);
}

inline std::string scalar_to_cell(const nlohmann::ordered_json& v, const std::string& where) {
  switch (v.type()) {
    case nlohmann::ordered_json::value_t::string: return v.get<std::string>();
    case nlohmann::ordered_json::value_t::null: return "";
    case nlohmann::ordered_json::value_t::boolean: return v.get<bool>() ? "true" : "false";
    case nlohmann::ordered_json::value_t::number_integer:
    case nlohmann::ordered_json::value_t::number_unsigned:
    case nlohmann::ordered_json::value_t::number_float: return v.dump();
    default: throw ParseError(where + ": nested values are not supported (records must be flat)");
  }
}

// Builds rows from flat JSON objects, keeping the key order of the first object.
class FlatRowBuilder {
 public:
  void add(const nlohmann::ordered_json& obj, const std::string& where) {
    if (!obj.is_object()) throw ParseError(where + ": expected a JSON object");
    std::vector<std::string> keys;
    for (auto it = obj.begin(); it != obj.end(); ++it) keys.push_back(it.key());
    if (rows_.empty()) {
      std::set<std::string> seen;
      for (const auto& k : keys)
        if (!seen.insert(k).second) throw ParseError(where + ": duplicate column name '" + k + "'");
      columns_ = keys;
    } else {
      std::vector<std::string> a = keys, b = columns_;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      if (a != b) throw ParseError(where + ": keys differ from the first record");
    }
    Record r;
    r.row_index = rows_.size();
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      r.values[it.key()] = scalar_to_cell(it.value(), where + ", key '" + it.key() + "'");
    }
    rows_.push_back(std::move(r));
  }

  DatasetTable build(std::string id) {
    std::vector<ColumnSpec> cols;
    for (const auto& c : columns_) cols.push_back(ColumnSpec{c});
    return DatasetTable(std::move(id), std::move(cols), std::move(rows_));
  }

 private:
  std::vector<std::string> columns_;
  std::vector<Record> rows_;
};

}  // namespace detail

// Parses in-memory content in the given format.
inline DatasetTable parse_table(std::string_view content, DataFormat format, const LoadOptions& opts = {}) {
  if (content.size() > opts.max_bytes)
    throw ParseError("dataset exceeds the size limit of " + std::to_string(opts.max_bytes) + " bytes");
  if (content.substr(0, 3) == "\xEF\xBB\xBF") content.remove_prefix(3);
  std::string id = opts.id.empty() ? "ds-" + sha256_hex(content).substr(0, 12) : opts.id;

  switch (format) {
    case DataFormat::csv: {
      std::vector<std::size_t> lines;
      auto records = detail::parse_csv_records(content, lines);
      if (records.empty()) throw ParseError("CSV has no header row");
      const auto& header = records.front();
      std::vector<ColumnSpec> cols;
      for (const auto& h : header) cols.push_back(ColumnSpec{h});
      std::vector<Record> rows;
      for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != header.size())
          throw ParseError("CSV line " + std::to_string(lines[r]) + ": expected " + std::to_string(header.size()) +
                           " fields, found " + std::to_string(records[r].size()));
        Record rec;
        rec.row_index = r - 1;
        for (std::size_t c = 0; c < header.size(); ++c) {
          if (!rec.values.emplace(header[c], records[r][c]).second)
            throw ParseError("duplicate column name '" + header[c] + "'");
        }
        rows.push_back(std::move(rec));
      }
      std::set<std::string> seen;
      for (const auto& h : header)
        if (!seen.insert(h).second) throw ParseError("duplicate column name '" + h + "'");
      return DatasetTable(std::move(id), std::move(cols), std::move(rows));
    }
    case DataFormat::json: {
      const auto doc = detail::parse_json_raw_numbers(content, "JSON dataset");
      if (!doc.is_array()) throw ParseError("JSON dataset must be an array of objects");
      detail::FlatRowBuilder builder;
      for (std::size_t i = 0; i < doc.size(); ++i) builder.add(doc[i], "JSON record " + std::to_string(i));
      return builder.build(std::move(id));
    }
    case DataFormat::jsonl: {
      detail::FlatRowBuilder builder;
      const auto ls = text::lines(content);
      for (std::size_t i = 0; i < ls.size(); ++i) {
        if (text::trim(ls[i]).empty()) continue;
        const std::string where = "JSONL line " + std::to_string(i + 1);
        builder.add(detail::parse_json_raw_numbers(ls[i], where), where);
      }
      return builder.build(std::move(id));
    }
  }
  throw ParseError("unsupported format");
}

inline std::string read_file(const std::filesystem::path& path, std::size_t max_bytes = SIZE_MAX) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot read '" + path.string() + "': " + ec.message());
  if (size > max_bytes)
    throw ParseError("'" + path.string() + "' exceeds the size limit of " + std::to_string(max_bytes) + " bytes");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline DatasetTable load_table(const std::filesystem::path& path, DataFormat format, const LoadOptions& opts = {}) {
  const auto content = read_file(path, opts.max_bytes);
  return parse_table(content, format, opts);
}

using InlineRow = std::vector<std::pair<std::string, std::string>>;

// Builds a table from inline rows; every row must carry the same keys.
inline DatasetTable table_from_rows(const std::vector<InlineRow>& rows, std::string id = "inline") {
  detail::FlatRowBuilder builder;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    nlohmann::ordered_json obj = nlohmann::ordered_json::object();
    for (const auto& [k, v] : rows[i]) {
      if (obj.contains(k)) throw ParseError("inline row " + std::to_string(i) + ": duplicate column name '" + k + "'");
      obj[k] = v;
    }
    builder.add(obj, "inline row " + std::to_string(i));
  }
  return builder.build(std::move(id));
}

namespace detail {
inline std::string csv_escape(const std::string& v) {
  if (v.find_first_of(",\"\r\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}
}  // namespace detail

// Serializes a table; reloading the output gives the same columns and cells.
inline std::string write_table(const DatasetTable& table, DataFormat format) {
  switch (format) {
    case DataFormat::csv: {
      std::string out;
      std::vector<std::string> header;
      for (const auto& c : table.columns()) header.push_back(detail::csv_escape(c.name));
      out += text::join(header, ",") + "\n";
      for (const auto& r : table.rows()) {
        std::vector<std::string> cells;
        for (const auto& c : table.columns()) cells.push_back(detail::csv_escape(r.at(c.name)));
        out += text::join(cells, ",") + "\n";
      }
      return out;
    }
    case DataFormat::json:
    case DataFormat::jsonl: {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      std::string out;
      for (const auto& r : table.rows()) {
        nlohmann::ordered_json obj = nlohmann::ordered_json::object();
        for (const auto& c : table.columns()) obj[c.name] = r.at(c.name);
        if (format == DataFormat::jsonl) out += obj.dump() + "\n";
        else arr.push_back(std::move(obj));
      }
      return format == DataFormat::json ? arr.dump(2) + "\n" : out;
    }
  }
  return {};
}

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> missing;
  // Informational only.
  std::vector<std::string> unused;
};

template <typename Names>
ValidationReport validate_columns(const DatasetTable& table, const Names& required) {
  ValidationReport report;
  std::set<std::string> req;
  for (const auto& n : required) {
    std::string name(n);
    if (!req.insert(name).second) continue;
    if (!table.has_column(name)) report.missing.push_back(name);
  }
  for (const auto& c : table.columns())
    if (!req.count(c.name)) report.unused.push_back(c.name);
  report.ok = report.missing.empty();
  return report;
}

inline ValidationReport validate_columns(const DatasetTable& table, std::initializer_list<std::string_view> required) {
  return validate_columns(table, std::vector<std::string_view>(required));
}

}  // namespace promptvar
