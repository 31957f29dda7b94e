// Copyright 2026 The misalign-bench Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal RFC 4180 reading/writing: quoted fields, doubled quotes, no
// embedded newlines.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace misbench::detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      if (!cur.empty() || was_quoted) throw std::invalid_argument("stray quote in field");
      quoted = was_quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
      was_quoted = false;
    } else {
      if (was_quoted) throw std::invalid_argument("text after closing quote");
      cur.push_back(ch);
    }
  }
  if (quoted) throw std::invalid_argument("unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

/// Accumulates rows into a CSV document with '\n' line endings.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) { row(header); }

  CsvWriter& row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_.push_back(',');
      out_ += csv_escape(fields[i]);
    }
    out_.push_back('\n');
    return *this;
  }

  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

/// Parsed CSV document keyed by header names.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;  // 1-based source lines of rows

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    return -1;
  }

  int require_column(std::string_view name, std::string_view source) const {
    const int c = column(name);
    if (c < 0) {
      throw std::runtime_error(std::string(source) + ": missing column '" + std::string(name) +
                               "'");
    }
    return c;
  }
};

inline CsvTable parse_csv(std::string_view text, std::string_view source) {
  CsvTable t;
  int line_no = 0;
  std::size_t pos = 0;
  if (text.substr(0, 3) == "\xEF\xBB\xBF") pos = 3;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    ++line_no;
    pos = nl + 1;
    if (line.empty() || line == "\r") {
      if (nl == text.size()) break;
      continue;
    }
    std::vector<std::string> fields;
    try {
      fields = split_csv_line(line);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(std::string(source) + ":" + std::to_string(line_no) + ": " +
                               e.what());
    }
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw std::runtime_error(std::string(source) + ":" + std::to_string(line_no) + ": expected " +
                               std::to_string(t.header.size()) + " fields, found " +
                               std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw std::runtime_error(std::string(source) + ": empty CSV");
  return t;
}

}  // namespace misbench::detail
