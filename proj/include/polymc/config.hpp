#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "polymc/field.hpp"
#include "polymc/walk.hpp"

namespace polymc::config {

// Flat key=value configuration: dotted keys, '#' comments, repeated keys
// allowed (walk.step), arrays comma-separated. Emission preserves entry
// order, so emit -> parse round-trips.
class Config {
public:
  static Config parse(const std::string& text);
  static Config load(const std::string& path);
  std::string emit() const;

  bool has(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const; // last occurrence
  std::vector<std::string> get_all(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;        // empty if absent
  std::vector<std::int64_t> get_ints(const std::string& key) const;

  void set(const std::string& key, const std::string& value); // replaces all occurrences
  void append(const std::string& key, const std::string& value);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  // FNV-1a over the canonical emission.
  std::uint64_t hash() const;

private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

walk::WalkModel walk_from_config(const Config& cfg);
field::FieldSpec field_from_config(const Config& cfg);

// Every violated constraint, without running anything. Empty means valid.
std::vector<std::string> validate_config(const Config& cfg);

// Keys recognized by the tools; unknown keys are reported by validate.
const std::vector<std::string>& known_keys();

} // namespace polymc::config
