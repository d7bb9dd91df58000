#include "sciedkit/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sciedkit/errors.hpp"

namespace sciedkit {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool pattern_matches(const std::string& pattern, const std::string& key) {
  // '#' in the pattern matches one run of decimal digits
  size_t pi = 0, ki = 0;
  while (pi < pattern.size() && ki < key.size()) {
    if (pattern[pi] == '#') {
      if (!std::isdigit(static_cast<unsigned char>(key[ki]))) return false;
      while (ki < key.size() && std::isdigit(static_cast<unsigned char>(key[ki]))) ++ki;
      ++pi;
    } else if (pattern[pi] == key[ki]) {
      ++pi;
      ++ki;
    } else {
      return false;
    }
  }
  return pi == pattern.size() && ki == key.size();
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  KeyValueConfig cfg = parse_text(buf.str(), path);
  cfg.set_origin_dir(std::filesystem::path(path).parent_path().string());
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_text(const std::string& text, const std::string& source_name) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source_name + ":" + std::to_string(line_no) +
                        ": expected `key = value`, got: " + trimmed);
    }
    const std::string key = trim(trimmed.substr(0, eq));
    const std::string value = trim(trimmed.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(source_name + ":" + std::to_string(line_no) + ": empty key");
    }
    cfg.set(key, value, source_name + ":" + std::to_string(line_no));
  }
  return cfg;
}

void KeyValueConfig::set(const std::string& key, const std::string& value,
                         const std::string& source) {
  entries_[key] = Entry{value, source};
}

bool KeyValueConfig::has(const std::string& key) const { return entries_.count(key) != 0; }

const KeyValueConfig::Entry& KeyValueConfig::fetch(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing required config key: " + key);
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key) const { return fetch(key).value; }

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? entries_.at(key).value : fallback;
}

int64_t KeyValueConfig::get_int(const std::string& key) const {
  const Entry& e = fetch(key);
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(e.value.c_str(), &end, 10);
  if (errno != 0 || end == e.value.c_str() || *end != '\0') {
    throw ConfigError("key `" + key + "` (" + e.source + "): expected integer, got `" + e.value + "`");
  }
  return v;
}

int64_t KeyValueConfig::get_int(const std::string& key, int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key) const {
  const Entry& e = fetch(key);
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(e.value.c_str(), &end);
  if (errno != 0 || end == e.value.c_str() || *end != '\0') {
    throw ConfigError("key `" + key + "` (" + e.source + "): expected number, got `" + e.value + "`");
  }
  return v;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

bool KeyValueConfig::get_bool(const std::string& key) const {
  const Entry& e = fetch(key);
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ConfigError("key `" + key + "` (" + e.source + "): expected boolean, got `" + e.value + "`");
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

std::vector<std::string> KeyValueConfig::get_list(const std::string& key) const {
  const std::string raw = get_string(key);
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(raw);
  while (std::getline(in, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

void KeyValueConfig::check_known(const std::vector<std::string>& patterns) const {
  for (const auto& [key, entry] : entries_) {
    bool ok = false;
    for (const auto& p : patterns) {
      if (pattern_matches(p, key)) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown config key `" + key + "` (" + entry.source + ")");
  }
}

void KeyValueConfig::require(const std::vector<std::string>& keys) const {
  for (const auto& k : keys) {
    if (!has(k)) throw ConfigError("missing required config key: " + k);
  }
}

std::vector<int> KeyValueConfig::indexed_group(const std::string& name) const {
  std::vector<int> indices;
  const std::string prefix = name + ".";
  for (const auto& [key, entry] : entries_) {
    (void)entry;
    if (key.rfind(prefix, 0) != 0) continue;
    const size_t dot = key.find('.', prefix.size());
    if (dot == std::string::npos) continue;
    const std::string idx = key.substr(prefix.size(), dot - prefix.size());
    if (idx.empty()) continue;
    bool digits = true;
    for (char c : idx) digits = digits && std::isdigit(static_cast<unsigned char>(c));
    if (!digits) continue;
    const int v = std::atoi(idx.c_str());
    bool seen = false;
    for (int existing : indices) seen = seen || existing == v;
    if (!seen) indices.push_back(v);
  }
  std::sort(indices.begin(), indices.end());
  return indices;
}

std::string KeyValueConfig::resolve_path(const std::string& value) const {
  std::filesystem::path p(value);
  if (p.is_absolute() || origin_dir_.empty()) return value;
  return (std::filesystem::path(origin_dir_) / p).string();
}

}  // namespace sciedkit
