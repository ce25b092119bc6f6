#include "pkml/csvio.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "pkml/errors.hpp"

namespace pkml::io {

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);  // binary: no platform newline games
  if (!out) throw IoError("cannot open for writing: " + path.string());
  auto write_row = [&out](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      out << row[i];
    }
    out << '\n';
  };
  write_row(table.header);
  for (const auto& row : table.rows) write_row(row);
  if (!out) throw IoError("write failed: " + path.string());
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.emplace_back();
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != table.header.size()) {
        throw IoError("ragged row in " + path.string() + " at data row " +
                      std::to_string(table.rows.size() + 1));
      }
      table.rows.push_back(std::move(fields));
    }
  }
  if (first) throw IoError("empty csv file: " + path.string());
  return table;
}

double parse_double(const std::string& field, const std::filesystem::path& context) {
  const char* begin = field.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin) throw IoError("bad numeric field '" + field + "' in " + context.string());
  return v;
}

}  // namespace pkml::io
