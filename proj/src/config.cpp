#include "fasn/config.hpp"

#include <algorithm>
#include <istream>
#include <set>

#include "fasn/errors.hpp"

namespace fasn {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

std::string normalize_key(std::string_view key) {
  std::string out(key);
  std::replace(out.begin(), out.end(), '-', '_');
  return out;
}

std::vector<ConfigEntry> parse_config(std::istream& in, const std::string& origin) {
  std::vector<ConfigEntry> entries;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const std::string text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    const std::string where = origin + ":" + std::to_string(number);
    if (eq == std::string::npos) throw FormatError(where + ": expected key=value, got '" + text + "'");
    ConfigEntry e{trim(std::string_view(text).substr(0, eq)), trim(std::string_view(text).substr(eq + 1)), number};
    if (e.key.empty()) throw FormatError(where + ": empty key");
    if (!seen.insert(normalize_key(e.key)).second) throw FormatError(where + ": key '" + e.key + "' repeated");
    entries.push_back(std::move(e));
  }
  return entries;
}

void check_config_keys(std::span<const ConfigEntry> entries, std::span<const std::string> allowed,
                       const std::string& origin) {
  std::set<std::string> known;
  for (const auto& k : allowed) known.insert(normalize_key(k));
  for (const auto& e : entries) {
    if (known.count(normalize_key(e.key)) == 0) {
      throw FormatError(origin + ":" + std::to_string(e.line) + ": unknown config key '" + e.key + "'");
    }
  }
}

}  // namespace fasn
