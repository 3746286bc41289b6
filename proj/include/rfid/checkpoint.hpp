#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "rfid/data.hpp"
#include "rfid/parameters.hpp"

namespace rfid {

/// On-disk layout:
///   8 bytes   magic "RFIDCKP1"
///   u64       header length, then the JSON header
///             {"model": ModelConfig, "vocabulary": [...], "meta": {...},
///              "tensors": [{"name", "rows", "cols"}, ...]}
///   per tensor: u32 name length, name bytes, u32 rows, u32 cols,
///               rows * cols little-endian float32 values, row-major
/// Integers are little-endian. Loading checks every tensor against the
/// layout implied by the header's ModelConfig.
struct Checkpoint {
  ModelConfig model;
  Vocabulary vocabulary;
  Parameters<float> params;
  nlohmann::json meta = nlohmann::json::object();
  /// Optional extra tensors (optimizer moments), keyed by name.
  std::map<std::string, Matrix<float>> extras;

  explicit Checkpoint(const ModelConfig& cfg) : model(cfg), params(cfg) {}
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rfid
