#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gliopipe/nn/optim.hpp"
#include "gliopipe/nn/resnet.hpp"

namespace gliopipe::nn {

// Container layout (all integers little-endian):
//   "GPCK" | u32 version | u64 header length | JSON header
//   | f32 parameters | f32 buffers | f32 Adam m | f32 Adam v | u32 CRC-32 of all preceding bytes
// The header carries the spec, the parameter and buffer manifests (payload
// order), the epoch index, the optimizer step and learning rate, the config
// hash and a free-form history object.
struct Checkpoint {
  ResNetSpec spec;
  std::vector<ManifestEntry> manifest;
  std::vector<std::vector<float>> parameters;
  std::vector<std::string> buffer_names;
  std::vector<std::vector<float>> buffers;
  bool has_optimizer = false;
  std::vector<std::vector<float>> adam_m;
  std::vector<std::vector<float>> adam_v;
  std::uint64_t optimizer_step = 0;
  double learning_rate = 0.0;
  int epoch = -1;
  double tune_loss = 0.0;
  std::string config_hash;
  nlohmann::json history = nlohmann::json::array();
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint capture(ResNet<float>& model, AdamW* optimizer = nullptr);
/// Copies weights (and optimizer state if both sides have it) into `model`.
/// Throws DataError if the manifests differ.
void restore(const Checkpoint& ckpt, ResNet<float>& model, AdamW* optimizer = nullptr);

nlohmann::json spec_to_json(const ResNetSpec& spec);
ResNetSpec spec_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace gliopipe::nn
