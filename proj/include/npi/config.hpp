#pragma once

#include <charconv>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "npi/binary_io.hpp"
#include "npi/errors.hpp"

namespace npi {

// Flat key=value configuration with dotted section prefixes
// (e.g. "lm.d_model=128"). Blank lines and lines starting with '#' are
// ignored. Later assignments override earlier ones.
class Config {
 public:
  static Config parse(std::string_view text, const std::string& origin = "config") {
    Config c;
    std::size_t line_no = 0, i = 0;
    while (i <= text.size()) {
      auto j = text.find('\n', i);
      if (j == std::string_view::npos) j = text.size();
      std::string_view line = trim(text.substr(i, j - i));
      ++line_no;
      i = j + 1;
      if (line.empty() || line.front() == '#') continue;
      c.assign(line, origin + ":" + std::to_string(line_no));
    }
    return c;
  }

  static Config load(const std::string& path) { return parse(read_file(path), path); }

  // Parses one "key=value" assignment.
  void assign(std::string_view assignment, const std::string& where = "override") {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key=value, got \"" + std::string(assignment) + "\"");
    const auto key = trim(assignment.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    for (char ch : key)
      if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '_'))
        throw ConfigError(where + ": invalid key \"" + std::string(key) + "\"");
    values_[std::string(key)] = std::string(trim(assignment.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.contains(key); }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    used_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing required setting " + key);
    return it->second;
  }

  template <class N>
  N number(const std::string& key, N fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const std::string s = get(key, "");
    N value{};
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ConfigError("setting " + key + "=\"" + s + "\" is not a valid number");
    return value;
  }

  bool flag(const std::string& key, bool fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const std::string s = get(key, "");
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("setting " + key + "=\"" + s + "\" is not a boolean");
  }

  // Comma-separated list; empty items are dropped.
  std::vector<std::string> list(const std::string& key, const std::vector<std::string>& fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    std::vector<std::string> out;
    std::string_view s = get(key, "");
    std::size_t i = 0;
    while (i <= s.size()) {
      auto j = s.find(',', i);
      if (j == std::string_view::npos) j = s.size();
      auto item = trim(s.substr(i, j - i));
      if (!item.empty()) out.emplace_back(item);
      i = j + 1;
    }
    return out;
  }

  template <class N>
  std::vector<N> numbers(const std::string& key, const std::vector<N>& fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    std::vector<N> out;
    for (const auto& item : list(key, {})) {
      N value{};
      auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
      if (ec != std::errc() || ptr != item.data() + item.size())
        throw ConfigError("setting " + key + " has a non-numeric item \"" + item + "\"");
      out.push_back(value);
    }
    return out;
  }

  // Keys that were provided but never read by the command.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.contains(k)) out.push_back(k);
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace npi
