#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lpie/error.hpp"

namespace lpie {

// UTF-8 `key=value` lines; `#` starts a comment, blank lines are ignored.
// Consumers take() the keys they understand; reject_unconsumed() then names
// the first unknown key.
class KeyValueText {
 public:
  static KeyValueText parse(std::string_view text);
  static KeyValueText load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  std::optional<std::string> take(const std::string& key);
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, bool value);

  double take_double(const std::string& key, double fallback);
  std::int64_t take_int(const std::string& key, std::int64_t fallback);
  std::uint64_t take_u64(const std::string& key, std::uint64_t fallback);
  bool take_bool(const std::string& key, bool fallback);
  std::vector<std::int64_t> take_int_list(const std::string& key, std::vector<std::int64_t> fallback);
  // Consumes every key starting with `prefix`; returned keys keep the prefix.
  std::vector<std::pair<std::string, std::string>> take_prefixed(const std::string& prefix);

  void reject_unconsumed() const;
  std::string str() const;
  bool empty() const { return entries_.empty(); }

 private:
  struct Entry {
    std::string key;
    std::string value;
    bool consumed = false;
  };
  Entry* find(const std::string& key);
  const Entry* find(const std::string& key) const;
  std::vector<Entry> entries_;
};

// Shortest decimal text that parses back to the same double; "inf" for +inf.
std::string format_double(double v);
double parse_double(const std::string& key, const std::string& text);
std::int64_t parse_int(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);

}  // namespace lpie
