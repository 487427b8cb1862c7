#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace partloc::dataset {

/// Writes to a sibling temp file, flushes it to stable storage and renames
/// it over `path`, so readers observe either the old or the new content.
void write_file_durably(const std::filesystem::path& path, std::string_view content);
void write_file_durably(const std::filesystem::path& path, std::span<const std::uint8_t> content);

/// Appends one line and flushes it to stable storage.
void append_line_durably(const std::filesystem::path& path, std::string_view line);

std::string read_text_file(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
bool parse_double(std::string_view text, double& out);

}  // namespace partloc::dataset
