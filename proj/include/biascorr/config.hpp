#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "biascorr/common.hpp"
#include "biascorr/data.hpp"

namespace biascorr {

// Plain key-value configuration with [section] headers. Keys are stored as
// "section.key"; keys before any section header keep their bare name.
// Command-line flags overwrite file values through set().
class Config {
 public:
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  double get_real(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      std::size_t pos = 0;
      double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument(it->second);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected a number, got '" +
                        it->second + "'");
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    const double v = get_real(key, static_cast<double>(fallback));
    const long long i = static_cast<long long>(v);
    if (static_cast<double>(i) != v)
      throw ConfigError("key '" + key + "': expected an integer");
    return i;
  }

  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected an unsigned integer");
    }
  }

  std::vector<std::string> get_list(const std::string& key,
                                    const std::string& fallback) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key, fallback));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

inline Config parse_config_text(const std::string& text,
                                const std::string& origin = "<config>") {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": malformed section header");
      section = detail::trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.set(section.empty() ? key : section + "." + key, value);
  }
  return cfg;
}

inline Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace biascorr
