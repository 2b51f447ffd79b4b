#pragma once

// Flat UTF-8 key=value configuration files. Blank lines and lines starting
// with '#' are ignored; whitespace around keys and values is trimmed.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ntk {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  /// Throws IoError when unreadable, ParseError on malformed lines.
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  /// Applies a "key=value" override.
  void set_assignment(const std::string& assignment);
  bool has(const std::string& key) const { return entries_.count(key) > 0; }
  std::optional<std::string> get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated lists.
  std::vector<std::int64_t> get_int_list(const std::string& key,
                                         const std::vector<std::int64_t>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  /// One "key=value" line per entry, sorted by key.
  std::string serialize() const;

 private:
  std::map<std::string, std::string> entries_;
};

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double v);

}  // namespace ntk
