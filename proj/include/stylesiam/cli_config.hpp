#pragma once

#include <string>

#include "stylesiam/trainer.hpp"

namespace stylesiam {

// Single JSON configuration file with "model", "loss" and "train" sections
// mirroring ModelConfig, LossParams and TrainConfig. Every field is optional
// and falls back to the module defaults; unknown keys are rejected naming
// the offending key. Command-line flags override file values.
TrainConfig parse_cli_config(const std::string& json_text);
TrainConfig load_cli_config(const std::string& path);  // empty path -> defaults

}  // namespace stylesiam
