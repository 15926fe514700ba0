// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace geomae {

// Flat key=value configuration text: one pair per line, '#' comments,
// serialized in sorted key order.
class ConfigMap {
 public:
  static ConfigMap load(const std::string& path);
  static ConfigMap from_text(const std::string& text);
  std::string text() const;
  void save(const std::string& path) const;

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& value);
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, std::int64_t value);
  void set_bool(const std::string& key, bool value);

  std::vector<std::string> keys() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace geomae
