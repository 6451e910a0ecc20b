#pragma once

// Line-oriented `key = value` text files shared by the filter configuration,
// training manifests and run manifests.

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xio/error.hpp"

namespace xio {

class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(std::istream& in, const std::string& origin = "<stream>") {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string body = trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorCode::MalformedFile,
                    origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      const std::string key = trim(body.substr(0, eq));
      if (key.empty()) {
        throw Error(ErrorCode::MalformedFile, origin + ":" + std::to_string(line_no) + ": empty key");
      }
      kv.values_[key] = trim(body.substr(eq + 1));
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingArtifact, "cannot open " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
      throw Error(ErrorCode::InvalidConfig, origin_ + ": missing key '" + key + "'");
    }
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, values_.at(key)) : fallback;
  }

  long get_int(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = values_.at(key);
    try {
      std::size_t used = 0;
      const long v = std::stol(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, origin_ + ": key '" + key + "' is not an integer: " + s);
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string& s = values_.at(key);
    if (s == "1" || s == "true" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "no") return false;
    throw Error(ErrorCode::InvalidConfig, origin_ + ": key '" + key + "' is not a boolean: " + s);
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : split(require(key), " ,\t")) out.push_back(to_double(key, tok));
    return out;
  }

  std::vector<std::string> get_list(const std::string& key) const {
    return has(key) ? split(values_.at(key), ",") : std::vector<std::string>{};
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

  void write(std::ostream& out) const {
    for (const auto& [k, v] : values_) out << k << " = " << v << "\n";
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split(const std::string& s, const std::string& seps) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (seps.find(c) != std::string::npos) {
        if (!trim(cur).empty()) out.push_back(trim(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
  }

 private:
  double to_double(const std::string& key, const std::string& s) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidConfig, origin_ + ": key '" + key + "' is not a number: " + s);
    }
  }

  std::string origin_ = "<memory>";
  std::map<std::string, std::string> values_;
};

}  // namespace xio
