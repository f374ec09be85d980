#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "chronopref/util/text.hpp"

namespace chronopref::util {

/// Minimal CSV table. Fields never contain commas, quotes or newlines in
/// the files this project writes; quoting is rejected on read.
class CsvTable {
 public:
  CsvTable() = default;
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  void add_row(std::vector<std::string> row) {
    if (row.size() != header_.size())
      throw std::invalid_argument("csv row has " + std::to_string(row.size()) + " fields, header has " +
                                  std::to_string(header_.size()));
    rows_.push_back(std::move(row));
  }

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
      if (header_[i] == name) return i;
    throw std::out_of_range("csv has no column '" + std::string(name) + "'");
  }

  std::string to_string() const {
    std::string out = join(header_, ",") + "\n";
    for (const auto& row : rows_) out += join(row, ",") + "\n";
    return out;
  }

  static CsvTable parse(std::string_view text) {
    CsvTable table;
    bool first = true;
    std::size_t start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) end = text.size();
      auto line = text.substr(start, end - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      start = end + 1;
      if (line.empty()) continue;
      if (line.find('"') != std::string_view::npos) throw std::runtime_error("quoted csv fields are not supported");
      auto fields = split(line, ',');
      if (first) {
        table.header_ = std::move(fields);
        first = false;
      } else {
        table.add_row(std::move(fields));
      }
    }
    return table;
  }

  static CsvTable load(const std::string& path) { return parse(read_file(path)); }
  void save(const std::string& path) const { write_file(path, to_string()); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace chronopref::util
