#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "midemo/core.hpp"
#include "midemo/dsp.hpp"
#include "midemo/models.hpp"
#include "midemo/trainer.hpp"

namespace midemo::config {

// Minimal TOML subset: [section] headers, key = value with string, number,
// boolean and flat-array values, # comments. Keys are flattened to
// "section.key".
using TomlValue = std::variant<std::string, double, bool, std::vector<double>>;
using TomlTable = std::map<std::string, TomlValue>;

TomlTable parse_toml(const std::string& text);
TomlTable parse_toml_file(const std::filesystem::path& path);

// "section.key=value" override, parsed with the same value grammar.
void apply_override(TomlTable& table, const std::string& assignment);

struct ExperimentConfig {
  std::filesystem::path audio_dir;
  std::filesystem::path midlevel_csv;
  std::filesystem::path emotion_csv;
  std::filesystem::path output_dir = "out";

  dsp::SpectrogramConfig spectrogram;
  models::TrunkConfig trunk;
  trainer::TrainingConfig training;

  std::string scheme = "a2e";
  std::size_t runs = 10;
  std::uint64_t base_seed = 1;
  double test_ratio = 0.2;

  void validate_paths() const;  // referenced inputs must exist
  std::string canonical() const;
  std::uint64_t hash() const;
  std::string hash_hex() const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides);
ExperimentConfig config_from_table(const TomlTable& table);

}  // namespace midemo::config
