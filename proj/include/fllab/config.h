#pragma once

// Flat `key = value` configuration with dotted namespaces and a closed key
// vocabulary. Lines starting with '#' are comments.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fllab {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

// Every key a configuration may set, with its default.
const std::vector<ConfigKey>& config_vocabulary();
bool is_config_key(const std::string& key);

class Config {
 public:
  // Defaults for every key; `seed` stays unset.
  Config();

  // Throws ConfigError on a malformed line or unknown key.
  static Config parse(const std::string& text, const std::string& origin = "<text>");
  // Throws IoError when the file cannot be read.
  static Config load(const std::filesystem::path& path);

  // `key=value`; throws ConfigError on an unknown key.
  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const;
  const std::string& raw(const std::string& key) const;

  // Typed accessors throw ConfigError naming the key on an invalid value.
  std::string str(const std::string& key) const;
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<std::size_t> count_list(const std::string& key) const;

  // Canonical `key = value` dump of every set key, sorted.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char sep);

}  // namespace fllab
