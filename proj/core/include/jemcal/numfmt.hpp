#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace jemcal {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Strict parse of the whole (whitespace-trimmed) string; nullopt on any junk.
std::optional<double> parse_double(std::string_view text);

std::string_view trim(std::string_view text);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace jemcal
