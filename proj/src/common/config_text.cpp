#include "lpie/config_text.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace lpie {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

KeyValueText KeyValueText::parse(std::string_view text) {
  KeyValueText kv;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string content = trim(line);
    if (content.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "line " + std::to_string(line_no) + ": expected key=value, got '" + content + "'");
    }
    std::string key = trim(std::string_view(content).substr(0, eq));
    std::string value = trim(std::string_view(content).substr(eq + 1));
    if (key.empty()) throw ConfigError("", "line " + std::to_string(line_no) + ": empty key");
    if (kv.find(key) != nullptr) throw ConfigError(key, "duplicate key on line " + std::to_string(line_no));
    kv.entries_.push_back({std::move(key), std::move(value), false});
    if (end == text.size()) break;
  }
  return kv;
}

KeyValueText KeyValueText::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("", "cannot open config file '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

KeyValueText::Entry* KeyValueText::find(const std::string& key) {
  for (auto& e : entries_) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

const KeyValueText::Entry* KeyValueText::find(const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

bool KeyValueText::has(const std::string& key) const { return find(key) != nullptr; }

std::optional<std::string> KeyValueText::take(const std::string& key) {
  Entry* e = find(key);
  if (e == nullptr) return std::nullopt;
  e->consumed = true;
  return e->value;
}

void KeyValueText::set(const std::string& key, const std::string& value) {
  if (Entry* e = find(key)) {
    e->value = value;
  } else {
    entries_.push_back({key, value, false});
  }
}

void KeyValueText::set(const std::string& key, double value) { set(key, format_double(value)); }
void KeyValueText::set(const std::string& key, std::int64_t value) { set(key, std::to_string(value)); }
void KeyValueText::set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }

double KeyValueText::take_double(const std::string& key, double fallback) {
  auto v = take(key);
  return v ? parse_double(key, *v) : fallback;
}

std::int64_t KeyValueText::take_int(const std::string& key, std::int64_t fallback) {
  auto v = take(key);
  return v ? parse_int(key, *v) : fallback;
}

std::uint64_t KeyValueText::take_u64(const std::string& key, std::uint64_t fallback) {
  auto v = take(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  const auto* first = v->data();
  const auto* last = v->data() + v->size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) throw ConfigError(key, "expected unsigned integer, got '" + *v + "'");
  return out;
}

bool KeyValueText::take_bool(const std::string& key, bool fallback) {
  auto v = take(key);
  return v ? parse_bool(key, *v) : fallback;
}

std::vector<std::int64_t> KeyValueText::take_int_list(const std::string& key, std::vector<std::int64_t> fallback) {
  auto v = take(key);
  if (!v) return fallback;
  std::vector<std::int64_t> out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  return out;
}

std::vector<std::pair<std::string, std::string>> KeyValueText::take_prefixed(const std::string& prefix) {
  std::vector<std::pair<std::string, std::string>> out;
  for (auto& e : entries_) {
    if (e.key.starts_with(prefix)) {
      e.consumed = true;
      out.emplace_back(e.key, e.value);
    }
  }
  return out;
}

void KeyValueText::reject_unconsumed() const {
  for (const auto& e : entries_) {
    if (!e.consumed) throw ConfigError(e.key, "unknown key");
  }
}

std::string KeyValueText::str() const {
  std::string out;
  for (const auto& e : entries_) out += e.key + "=" + e.value + "\n";
  return out;
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  if (text == "inf" || text == "+inf") return std::numeric_limits<double>::infinity();
  double out = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(out)) {
    throw ConfigError(key, "expected a number, got '" + text + "'");
  }
  return out;
}

std::int64_t parse_int(const std::string& key, const std::string& text) {
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(key, "expected an integer, got '" + text + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "on" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "off" || text == "no") return false;
  throw ConfigError(key, "expected a boolean, got '" + text + "'");
}

}  // namespace lpie
