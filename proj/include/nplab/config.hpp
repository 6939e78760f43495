#pragma once

// Run configuration: flat `key = value` text grouped in [sections], with
// command-line overrides addressed as `section.key`.

#include "nplab/trainer.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nplab {

// "section.key" -> raw value text (quotes stripped).
using ConfigMap = std::map<std::string, std::string>;

struct RunConfig {
  TrainConfig train;
  std::vector<std::size_t> context_counts;  // sweep sizes for eval, optional

  bool operator==(const RunConfig& other) const;
};

// Throws ConfigError naming the line on malformed input.
ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config_file(const std::filesystem::path& path);

// Throws ConfigError naming the field for unknown keys or bad values.
RunConfig run_config_from(const ConfigMap& map);

// Canonical text form; parsing it yields an equal RunConfig.
std::string to_config_text(const RunConfig& cfg);

// Maps a command-line flag ("seed", "eval-particles", "train.batch_size") to
// its config key. Throws ConfigError for unknown flags.
std::string config_key_for_flag(const std::string& flag);

}  // namespace nplab
