#pragma once

#include "wal/corpus.hpp"
#include "wal/training.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace wal {

inline constexpr const char* kToolVersion = "0.3.0";

/// Everything a run depends on: corpus generation plus training.
struct RunConfig {
  CorpusSpec corpus;
  TrainConfig train;

  void validate() const {
    corpus.validate();
    train.validate();
  }
};

// All recognised keys, in the order they are written.
const std::vector<std::string>& config_keys();

/// Sets one key from its text value. Unknown keys and unparsable values throw
/// ValidationError naming the key.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const RunConfig& config, std::string_view key);

/// Flat `key = value` lines; `#` starts a comment; blank lines ignored.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// Every key with its resolved value, one per line.
std::string format_config(const RunConfig& config);

/// Manifest = resolved config plus provenance comments. It parses back as a
/// config file, so `train --config manifest.txt` reproduces the run.
std::string format_manifest(const RunConfig& config, const std::map<std::string, std::string>& artifacts);

}  // namespace wal
