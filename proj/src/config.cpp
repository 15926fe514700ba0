// SPDX-License-Identifier: Apache-2.0
#include "geomae/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "geomae/error.hpp"

namespace geomae {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigMap ConfigMap::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  try {
    return from_text(buf.str());
  } catch (const ParseError& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
}

ConfigMap ConfigMap::from_text(const std::string& text) {
  ConfigMap cfg;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) {
      throw ParseError("line " + std::to_string(line_no) + ": empty key");
    }
    cfg.values_[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

std::string ConfigMap::text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << "=" << v << "\n";
  return os.str();
}

void ConfigMap::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("config: cannot write '" + path + "'");
  os << text();
}

bool ConfigMap::has(const std::string& key) const { return values_.count(key) != 0; }

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("key '" + key + "': '" + it->second + "' is not a number");
  }
}

std::int64_t ConfigMap::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("key '" + key + "': '" + it->second + "' is not an integer");
  }
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ParseError("key '" + key + "': '" + it->second + "' is not a boolean");
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

void ConfigMap::set_double(const std::string& key, double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  values_[key] = buf;
}

void ConfigMap::set_int(const std::string& key, std::int64_t value) {
  values_[key] = std::to_string(value);
}

void ConfigMap::set_bool(const std::string& key, bool value) {
  values_[key] = value ? "true" : "false";
}

std::vector<std::string> ConfigMap::keys() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

}  // namespace geomae
