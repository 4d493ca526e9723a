#pragma once

// Flat key-value configuration: one `section.key = value` per line, `#`
// comments, comma-separated lists.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ccmeta/error.hpp"

namespace ccmeta {

/// Invalid configuration; carries every problem found, one per entry.
class ConfigError : public DomainError {
 public:
  explicit ConfigError(std::vector<std::string> issues)
      : DomainError(join(issues)), issues_(std::move(issues)) {}

  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues) {
    std::string out = "invalid configuration:";
    for (const auto& s : issues) out += "\n  - " + s;
    return out;
  }

  std::vector<std::string> issues_;
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    out.push_back(trim(s.substr(start, end - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_number(std::string_view s, double& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

}  // namespace detail

/// Ordered key -> value store. Typed getters record a problem instead of
/// throwing, so one pass can report every bad entry.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in) {
    KeyValueConfig cfg;
    std::vector<std::string> issues;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      const std::string body = detail::trim(std::string_view(line).substr(0, hash));
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) {
        issues.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
        continue;
      }
      const std::string key = detail::trim(std::string_view(body).substr(0, eq));
      const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
      if (key.empty()) {
        issues.push_back("line " + std::to_string(lineno) + ": empty key");
      } else if (cfg.entries_.count(key) != 0) {
        issues.push_back("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      } else {
        cfg.entries_[key] = value;
      }
    }
    if (!issues.empty()) throw ConfigError(std::move(issues));
    return cfg;
  }

  static KeyValueConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot open config file '" + path + "'"});
    return parse(in);
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return entries_; }

  /// Keys that no getter asked for.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) {
      if (std::find(used_.begin(), used_.end(), k) == used_.end()) out.push_back(k);
    }
    return out;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    used_.push_back(key);
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback, std::vector<std::string>& issues) const {
    used_.push_back(key);
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    double v = 0.0;
    if (!detail::parse_number(it->second, v)) {
      issues.push_back(key + ": '" + it->second + "' is not a number");
      return fallback;
    }
    return v;
  }

  long get_long(const std::string& key, long fallback, std::vector<std::string>& issues) const {
    const double v = get_double(key, static_cast<double>(fallback), issues);
    if (v != static_cast<double>(static_cast<long>(v))) {
      issues.push_back(key + ": expected an integer");
      return fallback;
    }
    return static_cast<long>(v);
  }

  bool get_bool(const std::string& key, bool fallback, std::vector<std::string>& issues) const {
    const std::string s = get_string(key, fallback ? "true" : "false");
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    issues.push_back(key + ": expected true or false, got '" + s + "'");
    return fallback;
  }

  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback,
                                  std::vector<std::string>& issues) const {
    used_.push_back(key);
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<double> out;
    for (const auto& item : detail::split_list(it->second)) {
      double v = 0.0;
      if (!detail::parse_number(item, v)) {
        issues.push_back(key + ": '" + item + "' is not a number");
        return fallback;
      }
      out.push_back(v);
    }
    return out;
  }

  std::vector<std::string> get_strings(const std::string& key,
                                       const std::vector<std::string>& fallback) const {
    used_.push_back(key);
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return detail::split_list(it->second);
  }

 private:
  std::map<std::string, std::string> entries_;
  mutable std::vector<std::string> used_;
};

}  // namespace ccmeta
