#pragma once

// Flat key = value configuration with dotted keys. '#' starts a comment,
// blank lines are skipped. Typed access parses on demand and names the
// offending key on failure; validate() rejects anything outside the schema.

#include <map>
#include <string>
#include <vector>

#include "linorbits/model.hpp"

namespace linorbits {

class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& key) const;

  std::string str(const std::string& key) const;
  std::string str(const std::string& key, const std::string& fallback) const;
  double num(const std::string& key) const;
  double num(const std::string& key, double fallback) const;
  int integer(const std::string& key, int fallback) const;
  bool flag(const std::string& key, bool fallback) const;
  Vec vec(const std::string& key) const;  // comma-separated numbers
  Vec vec(const std::string& key, const Vec& fallback) const;

  // Exact names plus dotted prefixes ("model." admits any model.x).
  void validate(const std::vector<std::string>& exact,
                const std::vector<std::string>& prefixes = {}) const;

  // Sorted key=value lines, one per entry. Hashes are taken over this form.
  std::string canonical() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// FNV-1a 64-bit, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace linorbits
