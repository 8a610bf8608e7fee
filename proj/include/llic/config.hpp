#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "llic/model.hpp"
#include "llic/train.hpp"

namespace llic {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Flat `key = value` text; '#' starts a comment. Throws FormatError.
KeyValues parse_key_values(const std::string& text);
KeyValues load_key_values(const std::filesystem::path& path);

struct Settings {
  ModelConfig model = ModelConfig::full_scale();
  TrainConfig train;
  std::size_t lambda_index = 3;
};

/// Defaults, then `file`, then `overrides` (later wins). `preset` (full or
/// desk) is applied before any other key. Unknown keys are rejected.
Settings resolve_settings(const KeyValues& file, const KeyValues& overrides = {});

/// Every recognised key with its current value, one per line.
std::string format_settings(const Settings& s);

}  // namespace llic
