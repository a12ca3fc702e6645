#include "reqdep/csv.hpp"

#include "reqdep/errors.hpp"
#include "reqdep/fs.hpp"

#include <ostream>

namespace reqdep::csv {

std::vector<Row> parse(std::string_view content) {
    if (content.substr(0, 3) == "\xEF\xBB\xBF") content.remove_prefix(3);

    std::vector<Row> rows;
    Row row;
    std::string field;
    bool in_quotes = false;
    bool field_was_quoted = false;
    bool row_has_data = false;
    std::size_t line = 1;
    row.line = 1;

    auto end_field = [&] {
        row.fields.push_back(std::move(field));
        field.clear();
        field_was_quoted = false;
    };
    auto end_row = [&] {
        if (row_has_data) {
            end_field();
            rows.push_back(std::move(row));
        }
        row = Row{};
        field.clear();
        field_was_quoted = false;
        row_has_data = false;
    };

    for (std::size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!field.empty() || field_was_quoted) {
                    throw ParseError("line " + std::to_string(line) +
                                     ": stray quote inside unquoted field");
                }
                in_quotes = true;
                field_was_quoted = true;
                row_has_data = true;
                break;
            case ',':
                row_has_data = true;
                end_field();
                break;
            case '\r':
                break;
            case '\n':
                end_row();
                ++line;
                row.line = line;
                break;
            default:
                if (field_was_quoted) {
                    throw ParseError("line " + std::to_string(line) +
                                     ": text after closing quote");
                }
                field.push_back(c);
                row_has_data = true;
        }
    }
    if (in_quotes) throw ParseError("line " + std::to_string(row.line) + ": unterminated quote");
    end_row();
    return rows;
}

std::vector<Row> read_file(const std::filesystem::path& path) {
    return parse(fs::read_text(path));
}

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << escape(fields[i]);
    }
    out << '\n';
}

}  // namespace reqdep::csv
