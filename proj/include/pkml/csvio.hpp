#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pkml::io {

// Shortest round-trip decimal form of a double (std::to_chars), so emitted
// files are deterministic and parse back to the identical value.
std::string fmt_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);

// Reads a comma-separated file; the first row is the header. Throws IoError
// on missing files and ragged rows.
CsvTable read_csv(const std::filesystem::path& path);

double parse_double(const std::string& field, const std::filesystem::path& context);

}  // namespace pkml::io
