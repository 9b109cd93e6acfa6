// Locale-independent number formatting and the flat key = value config format.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tpose {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal representation that round-trips exactly.
std::string format_double(double v);

/// Whole-string parse; throws std::invalid_argument naming `what` on failure.
double parse_double(std::string_view text, std::string_view what = "number");
std::int64_t parse_int(std::string_view text, std::string_view what = "integer");
bool parse_bool(std::string_view text, std::string_view what = "flag");

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);
/// Splits on runs of spaces/tabs, dropping empty pieces.
std::vector<std::string_view> split_ws(std::string_view s);

struct KeyValue {
  std::string key;
  std::string value;
  int line = 0;
};

/// `key = value` lines; '#' starts a comment; blank lines ignored; keys may repeat.
std::vector<KeyValue> parse_key_values(std::istream& in);
std::vector<KeyValue> load_key_values(const std::filesystem::path& path);

}  // namespace tpose
