#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace reqdep::csv {

/// One parsed record and the 1-based physical line it started on.
struct Row {
    std::size_t line = 0;
    std::vector<std::string> fields;
};

/// RFC-4180 reader: quoted fields may contain commas, doubled quotes and
/// line breaks. A UTF-8 BOM at the start is skipped. Blank lines are skipped.
std::vector<Row> parse(std::string_view content);
std::vector<Row> read_file(const std::filesystem::path& path);

/// Quotes a field only when it contains a comma, quote, CR or LF.
std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace reqdep::csv
