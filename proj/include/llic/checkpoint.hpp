#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "llic/model.hpp"

namespace llic {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Flat list of named tensors tagged with a model-config digest.
struct Checkpoint {
  std::uint64_t digest = 0;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
  void put(const std::string& name, const Tensor& value);
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Name of the tensor that records the architecture inside a checkpoint.
inline constexpr const char* kConfigTensorName = "config.model";

Tensor config_to_tensor(const ModelConfig& config);
ModelConfig config_from_tensor(const Tensor& t);

/// Parameters plus the encoded ModelConfig.
Checkpoint model_checkpoint(const CompressionModel& model);
/// Copies parameter values into `model`. Throws FormatError on a digest,
/// name or shape mismatch.
void load_model_params(CompressionModel& model, const Checkpoint& ckpt);
/// Rebuilds the model described by the checkpoint and loads its parameters.
CompressionModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace llic
