#pragma once

// Plain numeric CSV tables: one header row, then rows of doubles.

#include <filesystem>
#include <string>
#include <vector>

namespace kqs {

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  /// Index of a named column; throws std::out_of_range if absent.
  std::size_t column_index(const std::string& name) const;
  bool has_column(const std::string& name) const;
  std::vector<double> column(const std::string& name) const;
  void add_row(std::vector<double> row);
};

/// Values are written with 12 significant digits so reruns are byte-identical.
void write_csv(const std::filesystem::path& path, const CsvTable& table);
std::string format_csv(const CsvTable& table);

/// Throws std::runtime_error on unreadable files or ragged rows.
CsvTable read_csv(const std::filesystem::path& path);

}  // namespace kqs
