#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dualpath/corpus.hpp"
#include "dualpath/encoders.hpp"
#include "dualpath/model.hpp"
#include "dualpath/objective.hpp"

namespace dualpath {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr_backbone = 1e-6;
  double lr_new_module = 1e-4;
  std::vector<std::size_t> decay_epochs{20, 40};
  double decay_factor = 0.1;
  double clip_norm = 5.0;
  double weight_decay = 1.5e-4;
  LossWeights loss;
  std::uint64_t seed = 7;
  FreezePolicy freeze;

  // Desk-scale defaults for the mini encoders trained from scratch.
  static TrainConfig toy();
  void validate() const;
};

// Everything a run needs, serialized as a flat UTF-8 "key = value" file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  MissingPromptMode missing_prompt = MissingPromptMode::Neutral;
  std::filesystem::path corpus;   // corpus CSV; images resolve relative to its directory
  std::filesystem::path prompts;  // prompt vocabulary CSV; empty uses the synthetic vocabulary
  std::filesystem::path out;

  // Toy model (g=4, d_v=32, d=16, depth 4, 5 synthetic attributes) with toy training defaults.
  static RunConfig toy();
  void validate() const;

  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  // Starts from toy() and applies every pair; unknown keys or bad values throw ConfigError.
  static RunConfig from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs);
};

// "key = value" lines; '#' starts a comment; blank lines ignored. Duplicate
// keys throw ConfigError.
std::vector<std::pair<std::string, std::string>> parse_key_values(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);
std::string format_run_config(const RunConfig& config);

// "hairstyle:4,upper:4" <-> attribute specs; "5" and "7" select the synthetic sets.
std::vector<AttributeSpec> parse_attribute_list(const std::string& text);
std::string format_attribute_list(const std::vector<AttributeSpec>& attributes);

}  // namespace dualpath
