#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace rfid {

/// Shape of the fusion encoder-decoder. `passages` and `max_tokens` fix the
/// decoder-memory layout; parameter shapes depend only on the widths and
/// vocabulary, so the parameter count does not grow with `passages`.
struct ModelConfig {
  int passages = 4;      // K
  int max_tokens = 32;   // L
  int hidden = 64;       // d
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int ffn_hidden = 0;    // 0 means 4 * hidden
  int vocab_size = 0;
  int max_target = 8;    // decoder positions, including BOS
  bool guide_decoder = true;
  std::uint64_t seed = 0;

  int ffn() const { return ffn_hidden > 0 ? ffn_hidden : 4 * hidden; }
  int head_dim() const { return hidden / heads; }
  int block_length() const { return guide_decoder ? max_tokens + 1 : max_tokens; }
  int memory_length() const { return passages * block_length(); }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class Variant { kFiD, kRFiD, kRFiDNoGuide };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

/// Whether the variant adds the rationale loss.
inline bool trains_classifier(Variant v) { return v != Variant::kFiD; }
inline bool guides_decoder(Variant v) { return v == Variant::kRFiD; }

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double ratn_weight = 1.0;
  int batch_size = 16;
  int total_steps = 2000;
  int eval_interval = 250;
  int dev_limit = 0;  // evaluate on the first N dev questions; 0 = all
  std::uint64_t seed = 0;
  Variant variant = Variant::kRFiD;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace rfid
