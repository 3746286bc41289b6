#include "rfid/config.hpp"

#include <cmath>

#include "rfid/data.hpp"
#include "rfid/errors.hpp"

namespace rfid {

using nlohmann::json;

void ModelConfig::validate() const {
  if (passages < 1) throw ConfigError("model: passages must be >= 1");
  if (max_tokens < 1) throw ConfigError("model: max_tokens must be >= 1");
  if (hidden < 1 || heads < 1) throw ConfigError("model: hidden and heads must be >= 1");
  if (hidden % heads != 0) throw ConfigError("model: hidden must be divisible by heads");
  if (enc_layers < 1 || dec_layers < 1) throw ConfigError("model: layer counts must be >= 1");
  if (ffn_hidden < 0) throw ConfigError("model: ffn_hidden must be >= 0");
  if (vocab_size < 5) throw ConfigError("model: vocab_size must exceed the reserved tokens");
  if (max_target < 2) throw ConfigError("model: max_target must be >= 2");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kFiD: return "fid";
    case Variant::kRFiD: return "rfid";
    case Variant::kRFiDNoGuide: return "rfid-noguide";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "fid" || name == "FiD") return Variant::kFiD;
  if (name == "rfid" || name == "RFiD") return Variant::kRFiD;
  if (name == "rfid-noguide" || name == "RFiD_no_guide") return Variant::kRFiDNoGuide;
  throw ConfigError("unknown variant '" + name + "' (expected fid, rfid or rfid-noguide)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning_rate must be positive");
  }
  if (!(weight_decay >= 0)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(ratn_weight >= 0)) throw ConfigError("train: ratn_weight must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0)) {
    throw ConfigError("train: invalid AdamW moments");
  }
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (total_steps < 0) throw ConfigError("train: total_steps must be >= 0");
  if (eval_interval < 1) throw ConfigError("train: eval_interval must be >= 1");
  if (dev_limit < 0) throw ConfigError("train: dev_limit must be >= 0");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"passages", c.passages},     {"max_tokens", c.max_tokens},
           {"hidden", c.hidden},         {"enc_layers", c.enc_layers},
           {"dec_layers", c.dec_layers}, {"heads", c.heads},
           {"ffn_hidden", c.ffn_hidden}, {"vocab_size", c.vocab_size},
           {"max_target", c.max_target}, {"guide_decoder", c.guide_decoder},
           {"seed", c.seed}};
}

template <class T>
static void read_opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
  }
}

void from_json(const json& j, ModelConfig& c) {
  read_opt(j, "passages", c.passages);
  read_opt(j, "max_tokens", c.max_tokens);
  read_opt(j, "hidden", c.hidden);
  read_opt(j, "enc_layers", c.enc_layers);
  read_opt(j, "dec_layers", c.dec_layers);
  read_opt(j, "heads", c.heads);
  read_opt(j, "ffn_hidden", c.ffn_hidden);
  read_opt(j, "vocab_size", c.vocab_size);
  read_opt(j, "max_target", c.max_target);
  read_opt(j, "guide_decoder", c.guide_decoder);
  read_opt(j, "seed", c.seed);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
           {"beta1", c.beta1},                 {"beta2", c.beta2},
           {"epsilon", c.epsilon},             {"ratn_weight", c.ratn_weight},
           {"batch_size", c.batch_size},       {"total_steps", c.total_steps},
           {"eval_interval", c.eval_interval}, {"dev_limit", c.dev_limit},
           {"seed", c.seed},                   {"variant", to_string(c.variant)}};
}

void from_json(const json& j, TrainConfig& c) {
  read_opt(j, "learning_rate", c.learning_rate);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "epsilon", c.epsilon);
  read_opt(j, "ratn_weight", c.ratn_weight);
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "total_steps", c.total_steps);
  read_opt(j, "eval_interval", c.eval_interval);
  read_opt(j, "dev_limit", c.dev_limit);
  read_opt(j, "seed", c.seed);
  if (j.contains("variant")) {
    std::string v;
    read_opt(j, "variant", v);
    c.variant = parse_variant(v);
  }
}

void to_json(json& j, const SynthesisConfig& c) {
  j = json{{"passages", c.passages},         {"min_rational", c.min_rational},
           {"max_rational", c.max_rational}, {"confusability", c.confusability},
           {"entity_tokens", c.entity_tokens}, {"filler_tokens", c.filler_tokens},
           {"name_pool", c.name_pool},       {"value_pool", c.value_pool},
           {"filler_pool", c.filler_pool},   {"train_size", c.train_size},
           {"dev_size", c.dev_size},         {"test_size", c.test_size},
           {"seed", c.seed}};
}

void from_json(const json& j, SynthesisConfig& c) {
  read_opt(j, "passages", c.passages);
  read_opt(j, "min_rational", c.min_rational);
  read_opt(j, "max_rational", c.max_rational);
  read_opt(j, "confusability", c.confusability);
  read_opt(j, "entity_tokens", c.entity_tokens);
  read_opt(j, "filler_tokens", c.filler_tokens);
  read_opt(j, "name_pool", c.name_pool);
  read_opt(j, "value_pool", c.value_pool);
  read_opt(j, "filler_pool", c.filler_pool);
  read_opt(j, "train_size", c.train_size);
  read_opt(j, "dev_size", c.dev_size);
  read_opt(j, "test_size", c.test_size);
  read_opt(j, "seed", c.seed);
}

}  // namespace rfid
