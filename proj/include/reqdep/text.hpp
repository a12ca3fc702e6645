#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace reqdep::text {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Lowercase, trim, collapse whitespace runs to one space and strip trailing
/// punctuation. Used for duplicate detection and vocabulary statistics.
std::string normalize(std::string_view s);

/// Split on ASCII whitespace; empty pieces are dropped.
std::vector<std::string> split_ws(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool is_number(std::string_view token);

/// 64-bit FNV-1a. Stable across platforms, unlike std::hash.
std::uint64_t fnv1a64(std::string_view s);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);
std::string format_float(float v);

}  // namespace reqdep::text
