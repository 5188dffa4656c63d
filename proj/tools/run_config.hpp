#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvcl/contrastive.hpp"
#include "mvcl/data.hpp"

namespace mvcl::cli {

struct KeySpec {
  const char* key;
  const char* default_value;
  const char* help;
  bool is_path = false;
};

/// Every key the configuration file may contain, with its default.
const std::vector<KeySpec>& key_schema();

/// Flat `key = value` configuration. Blank lines and lines starting with '#'
/// are ignored. Unknown keys, duplicate keys and malformed lines raise
/// kConfiguration.
class RunConfig {
 public:
  RunConfig();  // all defaults

  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text, const std::string& origin = "<text>");

  void set(const std::string& key, const std::string& value);  // kConfiguration on unknown key
  const std::string& raw(const std::string& key) const;
  bool has_value(const std::string& key) const { return !raw(key).empty(); }

  std::string text(const std::string& key) const { return raw(key); }
  long integer(const std::string& key) const;
  std::uint64_t unsigned_integer(const std::string& key) const;
  double real(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;  // kConfiguration if empty

  LossMode loss_mode() const;
  DatasetMode dataset() const;

  /// Makes every non-empty path key absolute against `base`.
  void resolve_paths(const std::filesystem::path& base);

  /// Same format as the input, all keys in schema order.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mvcl::cli
