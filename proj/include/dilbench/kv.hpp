#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dilbench {

// Plain-text "key = value" files. '#' starts a comment line; keys may contain
// spaces; the first '=' separates key from value; both sides are trimmed.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

std::vector<KeyValue> parse_key_values(std::string_view text, const std::string& origin);
std::vector<KeyValue> read_key_values(const std::filesystem::path& path);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

double parse_double(const std::string& text, const std::string& context);
long long parse_int(const std::string& text, const std::string& context);

// Shortest decimal text that reads back to exactly the same double.
std::string format_double(double value);

}  // namespace dilbench
