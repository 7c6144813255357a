#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "atmgcn/data.hpp"
#include "atmgcn/gcn.hpp"
#include "atmgcn/training.hpp"

namespace atmgcn {

// Everything a run needs, flattened into one JSON object. See docs/FORMATS.md.
struct RunConfig {
  std::string preset = "small";
  std::string manifest;  // dataset manifest.csv; may be empty for synth/inspect
  std::size_t jobs = 1;
  ModelConfig model;
  TrainConfig train;
  PreprocessOptions data;

  void validate() const;
};

// Settings that command-line flags may override; unset means "keep".
struct ConfigOverrides {
  std::optional<std::string> preset;
  std::optional<std::string> variant;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::string> manifest;
};

// Applies a named size preset. Throws ConfigError for unknown names.
void apply_preset(RunConfig& config, const std::string& preset);

nlohmann::json to_json(const RunConfig& config);
// Keys missing from `j` keep the value already in `config`. Unknown keys and
// values of the wrong type raise ConfigError naming the key.
void merge_json(RunConfig& config, const nlohmann::json& j);

// defaults -> preset -> file -> overrides, then validate().
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const ConfigOverrides& overrides);
RunConfig config_from_json_text(const std::string& text);

// Stable, sorted, two-space indented rendering.
std::string dump_config(const RunConfig& config);

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const EpochRecord& r);
nlohmann::json history_json(const std::vector<EpochRecord>& history);
nlohmann::json loso_report_json(const LosoReport& report, const RunConfig& config);
nlohmann::json loso_history_json(const LosoReport& report);

nlohmann::json read_json_file(const std::filesystem::path& path);
// Writes to <path>.tmp then renames over <path>.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace atmgcn
