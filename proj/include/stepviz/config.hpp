#pragma once

// Flat "key = value" configuration with ${VAR} environment interpolation.

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "stepviz/error.hpp"

namespace stepviz {

class Config {
 public:
  struct Entry {
    std::string raw;       // as written, before interpolation
    std::string resolved;  // after ${VAR} substitution
  };

  static Config parse(std::string_view text, const std::string& origin = "<config>") {
    Config cfg;
    std::istringstream in{std::string(text)};
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#' || line[first] == ';') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      cfg.set(key, value);
    }
    return cfg;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  void set(const std::string& key, const std::string& raw) { entries_[key] = {raw, interpolate(raw)}; }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second.resolved;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    return get(key).value_or(fallback);
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      const long long x = std::stoll(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing characters");
      return x;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + " expects an integer, got \"" + *v + "\"");
    }
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      const double x = std::stod(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing characters");
      return x;
    } catch (const std::exception&) {
      throw ConfigError("key " + key + " expects a number, got \"" + *v + "\"");
    }
  }

  // Raw (uninterpolated) values, with anything that looks like a credential dropped.
  nlohmann::ordered_json snapshot() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, e] : entries_) {
      if (is_secret_key(k)) continue;
      j[k] = e.raw;
    }
    return j;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }

  static bool is_secret_key(std::string key) {
    std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (key.size() >= 4 && key.compare(key.size() - 4, 4, "_env") == 0) return false;
    for (const char* s : {"key", "token", "secret", "password"}) {
      if (key.find(s) != std::string::npos) return true;
    }
    return false;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  // ${VAR} -> value of VAR (empty when unset); $$ -> $.
  static std::string interpolate(const std::string& raw) {
    std::string out;
    for (std::size_t k = 0; k < raw.size(); ++k) {
      if (raw[k] == '$' && k + 1 < raw.size() && raw[k + 1] == '$') {
        out.push_back('$');
        ++k;
      } else if (raw[k] == '$' && k + 1 < raw.size() && raw[k + 1] == '{') {
        const auto close = raw.find('}', k + 2);
        if (close == std::string::npos) throw ConfigError("unterminated ${ in \"" + raw + "\"");
        const auto name = raw.substr(k + 2, close - k - 2);
        if (const char* v = std::getenv(name.c_str())) out += v;
        k = close;
      } else {
        out.push_back(raw[k]);
      }
    }
    return out;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace stepviz
