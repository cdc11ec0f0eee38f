#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace attrinet {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ConfigMap = std::map<std::string, std::string>;

/// Flat `key = value` text. `#` starts a comment; `include = path` (or
/// `include path`) splices another file, resolved relative to the including
/// file. Later assignments override earlier ones.
ConfigMap read_config(const std::filesystem::path& path);
ConfigMap parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
std::string format_config(const ConfigMap& cfg);

/// Typed access that records which keys were consumed so leftovers can be
/// rejected as unknown.
class ConfigReader {
 public:
  explicit ConfigReader(ConfigMap cfg) : cfg_(std::move(cfg)) {}

  bool has(const std::string& key) const { return cfg_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback);
  std::string require(const std::string& key);
  double get_double(const std::string& key, double fallback);
  long get_long(const std::string& key, long fallback);
  int get_int(const std::string& key, int fallback) { return static_cast<int>(get_long(key, fallback)); }
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback);

  /// Marks keys as known without reading them.
  void accept(const std::string& key) { used_.insert(key); }
  /// Throws ConfigError naming every key that was never read.
  void reject_unknown() const;
  const ConfigMap& raw() const { return cfg_; }

 private:
  ConfigMap cfg_;
  std::set<std::string> used_;
};

}  // namespace attrinet
