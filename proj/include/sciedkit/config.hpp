#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sciedkit {

// Flat key-value run configuration. Grammar: one `key = value` per line,
// `#` starts a comment, blank lines ignored. Values keep inner whitespace.
class KeyValueConfig {
 public:
  struct Entry {
    std::string value;
    std::string source;  // "file:line" or "cli"
  };

  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_text(const std::string& text, const std::string& source_name);

  void set(const std::string& key, const std::string& value, const std::string& source);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key) const;  // comma-separated

  // Rejects entries not matching any accepted pattern. `#` in a pattern
  // segment matches a decimal integer, e.g. "corpus.#.path".
  void check_known(const std::vector<std::string>& patterns) const;
  void require(const std::vector<std::string>& keys) const;

  // Keys matching prefix "name.#." — returns the sorted integer indices.
  std::vector<int> indexed_group(const std::string& name) const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  const std::string& origin_dir() const { return origin_dir_; }
  void set_origin_dir(const std::string& dir) { origin_dir_ = dir; }

  // Paths in config files are resolved relative to the file's directory.
  std::string resolve_path(const std::string& value) const;

 private:
  const Entry& fetch(const std::string& key) const;
  std::map<std::string, Entry> entries_;
  std::string origin_dir_;
};

}  // namespace sciedkit
