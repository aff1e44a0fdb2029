#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace advx {

// Flat "section.key=value" text. Blank lines and lines starting with '#' are
// ignored. Keys keep their insertion-independent sorted order when written.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::string& path);

  std::string to_string() const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set_number(const std::string& key, double value);
  void set_int(const std::string& key, std::int64_t value);
  void erase(const std::string& key) { values_.erase(key); }
  // Entries of `other` replace entries here.
  void merge(const KeyValues& other);

  // Getters throw std::invalid_argument naming the key on parse failure.
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_number(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& key,
                                     const std::vector<std::size_t>& fallback) const;
  std::vector<double> get_numbers(const std::string& key,
                                  const std::vector<double>& fallback) const;

  // Keys under `prefix` that are not in `known`.
  std::vector<std::string> unknown_keys(const std::string& prefix,
                                        const std::vector<std::string>& known) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
std::vector<double> parse_number_list(const std::string& text, const std::string& what);
std::vector<std::string> split(const std::string& text, char sep);
std::string trim(const std::string& text);

}  // namespace advx
