#pragma once

// Flat key/value configuration shared by every subcommand. Layers are applied
// in order: built-in defaults, then a JSON config file, then command-line
// overrides. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gaaf/infer.hpp"
#include "gaaf/synth.hpp"
#include "gaaf/train.hpp"
#include "json.hpp"

namespace gaaf {

struct RunConfig {
  std::string in;
  std::string out;
  std::string checkpoint;
  std::string results;
  std::uint64_t seed = 0;

  PhantomSpec phantom;
  PreprocessOptions preprocess;
  LocatorConfig model;
  TrainConfig train;
  int fold = -1;  ///< -1 trains every fold

  Extraction method = Extraction::GaussianFit;
  double tau = 0.5;
  Dims3 crop_dims = Dims3::Zero();  ///< zero means no crop

  bool cropping() const { return (crop_dims > 0).all(); }
};

struct ConfigKey {
  std::string name;
  std::string help;
};

/// Every accepted key with a one-line description, in documentation order.
const std::vector<ConfigKey>& config_keys();

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; bad values are UsageErrors naming the key.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies `patch` onto `base`; unknown keys are UsageErrors mentioning `source`.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, std::string_view source);

/// Parses the right-hand side of `key=value`: JSON when it parses, else a string.
nlohmann::json parse_override_value(std::string_view text);

/// "ZxYxX" -> dims; anything else is a UsageError.
Dims3 parse_dims(std::string_view text);

/// defaults < file (when non-empty) < overrides, in the order given.
RunConfig resolve_config(const std::filesystem::path& file,
                         const std::vector<std::pair<std::string, nlohmann::json>>& overrides);

}  // namespace gaaf
