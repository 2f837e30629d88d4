#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace gliopipe {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

/// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_escape(std::string_view field);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

std::string read_text_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename so readers never see partial files.
void write_text_file(const std::filesystem::path& path, std::string_view contents);

/// Fixed-precision decimal rendering ("%.*f"), locale independent.
std::string format_fixed(double value, int digits);

}  // namespace gliopipe
