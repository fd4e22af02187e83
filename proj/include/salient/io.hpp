#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace salient {

// Writes via a sibling temp file and rename. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Throws IoError when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

}  // namespace salient
