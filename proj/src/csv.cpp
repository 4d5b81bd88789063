#include "kqs/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace kqs {

std::size_t CsvTable::column_index(const std::string& name) const {
  for (std::size_t c = 0; c < columns.size(); ++c)
    if (columns[c] == name) return c;
  throw std::out_of_range("csv: no column named '" + name + "'");
}

bool CsvTable::has_column(const std::string& name) const {
  for (const auto& c : columns)
    if (c == name) return true;
  return false;
}

std::vector<double> CsvTable::column(const std::string& name) const {
  const std::size_t c = column_index(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[c]);
  return out;
}

void CsvTable::add_row(std::vector<double> row) {
  if (row.size() != columns.size()) throw std::invalid_argument("csv: row width does not match header");
  rows.push_back(std::move(row));
}

std::string format_csv(const CsvTable& table) {
  std::string out;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c) out += ',';
    out += table.columns[c];
  }
  out += '\n';
  char buf[40];
  for (const auto& r : table.rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) out += ',';
      // Avoid "-0" so that sign-of-zero noise cannot change the bytes.
      const double v = r[c] == 0.0 ? 0.0 : r[c];
      std::snprintf(buf, sizeof buf, "%.12g", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("csv: cannot write " + path.string());
  f << format_csv(table);
  if (!f) throw std::runtime_error("csv: write failed for " + path.string());
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("csv: cannot read " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("csv: empty file " + path.string());
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.columns.push_back(cell);
  }
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw std::runtime_error("csv: bad number '" + cell + "' at " + path.string() + ":" + std::to_string(line_no));
      }
    }
    if (row.size() != t.columns.size())
      throw std::runtime_error("csv: ragged row at " + path.string() + ":" + std::to_string(line_no));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace kqs
