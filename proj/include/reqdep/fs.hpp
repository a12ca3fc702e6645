#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace reqdep::fs {

std::string read_text(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over the target.
void write_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace reqdep::fs
