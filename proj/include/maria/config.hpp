#pragma once

// Flat `key = value` configuration shared by every command. `#` starts a
// comment; unknown keys are rejected; every key has a default.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "maria/data.hpp"
#include "maria/model.hpp"
#include "maria/trainer.hpp"

namespace maria {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
  std::string section;
};

const std::vector<ConfigKey>& config_keys();

/// Every key with its default and description, grouped by section.
std::string config_help();

class Config {
 public:
  Config();

  /// `source` prefixes error messages ("source:line: ...").
  static Config parse(std::string_view text, const std::string& source = "config");
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  /// "key=value", as given to --set.
  void assign(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::size_t> counts(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;

  /// All keys, one `key = value` line each, in registry order.
  std::string render() const;

 private:
  std::map<std::string, std::string> values_;
};

Schema schema_from(const Config& c);
Vocabulary vocab_from(const Config& c);
ProfileRecipe recipe_from(const Config& c);
GeneratorOptions generator_from(const Config& c);
ModelConfig model_from(const Config& c);
TrainConfig train_from(const Config& c);

/// Comma list of components to switch off: fs, fr, fcm, nl, st, gs.
AblationFlags parse_disable(const std::string& list);
std::string disable_list(const AblationFlags& enabled);

/// Canonical text of every setting a model's parameters depend on.
std::string model_config_text(const ModelConfig& config);
ModelConfig model_config_from_text(std::string_view text);
std::uint64_t config_digest(const ModelConfig& config);

}  // namespace maria
