#pragma once

// Flat TOML-style configuration: `[section]` headers and `key = value` lines.
// Values are strings (quoted or bare), numbers, booleans, or one-level
// arrays such as `[1, 2, 3]`. Keys are stored as "section.key".

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dtdbd/errors.hpp"
#include "dtdbd/io.hpp"

namespace dtdbd {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Drops a trailing `# comment` that is not inside double quotes.
inline std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

inline std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

}  // namespace detail

class ConfigDoc {
 public:
  static ConfigDoc parse(std::istream& in) {
    ConfigDoc doc;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = detail::trim(detail::strip_comment(line));
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') throw ParseError("unterminated section header", lineno);
        section = detail::trim(t.substr(1, t.size() - 2));
        if (section.empty()) throw ParseError("empty section name", lineno);
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ParseError("expected key = value", lineno);
      const std::string key = detail::trim(t.substr(0, eq));
      const std::string value = detail::trim(t.substr(eq + 1));
      if (key.empty()) throw ParseError("missing key", lineno);
      if (value.empty()) throw ParseError("missing value for '" + key + "'", lineno);
      const std::string full = section.empty() ? key : section + "." + key;
      if (doc.values_.count(full)) throw ParseError("duplicate key '" + full + "'", lineno);
      doc.values_[full] = value;
    }
    return doc;
  }

  static ConfigDoc parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static ConfigDoc load(const std::filesystem::path& path) { return parse_string(read_file(path)); }

  /// Applies a `section.key=value` override.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override '" + assignment + "' must look like section.key=value");
    values_[detail::trim(assignment.substr(0, eq))] = detail::trim(assignment.substr(eq + 1));
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : detail::unquote(it->second);
  }

  double real(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second, &used);
      if (used == it->second.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError("'" + key + "' is not a number: " + it->second);
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_uint(key, it->second);
  }

  bool boolean(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true") return true;
    if (it->second == "false") return false;
    throw ConfigError("'" + key + "' must be true or false");
  }

  std::vector<std::size_t> integers(const std::string& key, const std::vector<std::size_t>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::size_t> out;
    for (const auto& item : array_items(key, it->second)) out.push_back(static_cast<std::size_t>(parse_uint(key, item)));
    return out;
  }

  std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::string> out;
    for (const auto& item : array_items(key, it->second)) out.push_back(detail::unquote(item));
    return out;
  }

  /// Keys not in `known`; used to reject typos.
  std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (std::find(known.begin(), known.end(), k) == known.end()) out.push_back(k);
    return out;
  }

 private:
  static std::vector<std::string> array_items(const std::string& key, const std::string& v) {
    if (v.size() < 2 || v.front() != '[' || v.back() != ']')
      throw ConfigError("'" + key + "' must be an array like [1, 2]");
    std::vector<std::string> out;
    std::stringstream ss(v.substr(1, v.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  static std::uint64_t parse_uint(const std::string& key, const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("'" + key + "' is not a non-negative integer: " + s);
    try {
      return std::stoull(s);
    } catch (const std::out_of_range&) {
      throw ConfigError("'" + key + "' is out of range: " + s);
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace dtdbd
