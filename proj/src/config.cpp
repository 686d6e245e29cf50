#include "linorbits/config.hpp"

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "linorbits/error.hpp"

namespace linorbits {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& key, const std::string& raw) {
  const std::string t = trim(raw);
  if (t.empty()) fail(errc::input, "config key '" + key + "' is empty");
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size())
    fail(errc::input, "config key '" + key + "' is not a number: '" + t + "'");
  return v;
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(errc::input, "cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(errc::input, "malformed config line " + std::to_string(lineno) + ": '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      fail(errc::input, "empty key on config line " + std::to_string(lineno));
    if (cfg.kv_.count(key)) fail(errc::input, "duplicate config key '" + key + "'");
    cfg.kv_[key] = val;
  }
  return cfg;
}

bool Config::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string Config::str(const std::string& key) const {
  const auto it = kv_.find(key);
  if (it == kv_.end()) fail(errc::input, "missing config key '" + key + "'");
  return it->second;
}

std::string Config::str(const std::string& key, const std::string& fallback) const {
  const auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

double Config::num(const std::string& key) const { return parse_number(key, str(key)); }

double Config::num(const std::string& key, double fallback) const {
  return has(key) ? num(key) : fallback;
}

int Config::integer(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  const double v = num(key);
  const int i = static_cast<int>(v);
  if (v != i) fail(errc::input, "config key '" + key + "' is not an integer");
  return i;
}

bool Config::flag(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = str(key);
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  fail(errc::input, "config key '" + key + "' is not a boolean: '" + v + "'");
}

Vec Config::vec(const std::string& key) const {
  const std::string raw = str(key);
  std::vector<double> vals;
  std::string item;
  std::istringstream in(raw);
  while (std::getline(in, item, ',')) vals.push_back(parse_number(key, item));
  if (vals.empty()) fail(errc::input, "config key '" + key + "' is an empty vector");
  Vec v(vals.size());
  for (size_t i = 0; i < vals.size(); ++i) v[i] = vals[i];
  return v;
}

Vec Config::vec(const std::string& key, const Vec& fallback) const {
  return has(key) ? vec(key) : fallback;
}

void Config::validate(const std::vector<std::string>& exact,
                      const std::vector<std::string>& prefixes) const {
  for (const auto& [key, val] : kv_) {
    bool ok = false;
    for (const auto& e : exact)
      if (key == e) ok = true;
    for (const auto& p : prefixes)
      if (key.size() > p.size() && key.compare(0, p.size(), p) == 0) ok = true;
    if (!ok) fail(errc::input, "unknown config key '" + key + "'");
  }
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [key, val] : kv_) {
    out += key;
    out += '=';
    out += val;
    out += '\n';
  }
  return out;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (const char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace linorbits
