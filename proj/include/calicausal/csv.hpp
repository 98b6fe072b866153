#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace calicausal {

// Shortest round-trip decimal form of a double. Used for every float written
// to disk so that rerunning a command reproduces files byte for byte.
std::string format_double(double v);

double parse_double(std::string_view s);
std::int64_t parse_int(std::string_view s);

std::vector<std::string> split_csv_line(std::string_view line);

// Minimal CSV table: a header row plus string cells. Files use '\n' endings
// and UTF-8 throughout.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace calicausal
