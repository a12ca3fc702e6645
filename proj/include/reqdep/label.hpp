#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace reqdep {

/// Dependency label of a requirement pair.
enum class Label { Conflict, Neutral };

/// Canonical spelling: "Conflict" / "Neutral".
std::string_view to_string(Label label);

/// Case-insensitive parse; surrounding whitespace is ignored.
std::optional<Label> parse_label(std::string_view text);

}  // namespace reqdep
