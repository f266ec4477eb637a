#pragma once

// Flat `key = value` configuration (UTF-8, `#` starts a comment).

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace drakes {

std::uint64_t fnv1a64(const std::string& text);
std::string hex64(std::uint64_t v);

class Config {
 public:
  static Config parse(std::istream& is, const std::string& origin = "<stream>");
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  // Applies `--key value` pairs (and bare `--flag` as "true"). Returns the
  // arguments that were not of that form.
  std::vector<std::string> apply_overrides(const std::vector<std::string>& args);

  // Sorted `key = value` lines; stable input for hashing.
  std::string canonical() const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace drakes
