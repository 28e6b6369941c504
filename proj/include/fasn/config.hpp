#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fasn {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Flat `key = value` text. Blank lines and lines starting with '#' are skipped;
/// keys and values are trimmed. A line without '=', an empty key or a repeated
/// key is a FormatError that names `origin` and the line.
std::vector<ConfigEntry> parse_config(std::istream& in, const std::string& origin);

/// Keys compare with '-' and '_' treated alike ("batch-size" == "batch_size").
std::string normalize_key(std::string_view key);

/// Throws FormatError naming the first entry whose key is not in `allowed`.
void check_config_keys(std::span<const ConfigEntry> entries, std::span<const std::string> allowed,
                       const std::string& origin);

}  // namespace fasn
