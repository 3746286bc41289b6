#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfid/config.hpp"
#include "rfid/tensor.hpp"

namespace rfid {

struct LinearSlots {
  int weight = -1;  // in x out
  int bias = -1;    // 1 x out
};

struct NormSlots {
  int gain = -1;
  int bias = -1;
};

struct AttentionSlots {
  LinearSlots query, key, value, output;
};

struct FeedForwardSlots {
  LinearSlots in, out;
};

struct EncoderLayerSlots {
  NormSlots norm1;
  AttentionSlots self_attention;
  NormSlots norm2;
  FeedForwardSlots ffn;
};

struct DecoderLayerSlots {
  NormSlots norm1;
  AttentionSlots self_attention;
  NormSlots norm2;
  AttentionSlots cross_attention;
  NormSlots norm3;
  FeedForwardSlots ffn;
};

struct TensorSpec {
  std::string name;
  int rows = 0;
  int cols = 0;
};

/// Stable names and shapes of every learnable tensor, plus the slot indices
/// the network uses to find them.
struct ParameterLayout {
  std::vector<TensorSpec> specs;
  int encoder_embedding = -1;
  std::vector<EncoderLayerSlots> encoder_layers;
  NormSlots encoder_norm;
  int decoder_embedding = -1;
  std::vector<DecoderLayerSlots> decoder_layers;
  NormSlots decoder_norm;
  LinearSlots lm_head;
  int classifier_weight = -1;  // 2 x d
  int classifier_bias = -1;    // 1 x 2
  int rationale_embedding = -1;  // 2 x d; row 0 spurious, row 1 rational

  explicit ParameterLayout(const ModelConfig& cfg);
  int find(const std::string& name) const;  // -1 when absent
};

/// Named tensor collection θ. Gradients and optimizer moments reuse the same
/// type so every tensor lines up by index.
template <class Scalar>
class Parameters {
 public:
  explicit Parameters(const ModelConfig& cfg);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return layout_.specs[i].name; }
  Matrix<Scalar>& operator[](std::size_t i) { return tensors_[i]; }
  const Matrix<Scalar>& operator[](std::size_t i) const { return tensors_[i]; }
  Matrix<Scalar>& at(const std::string& name);
  const Matrix<Scalar>& at(const std::string& name) const;

  /// Total scalar count.
  std::size_t count() const;
  void set_zero();
  bool all_finite() const;
  Parameters zeros_like() const;

  template <class Other>
  Parameters<Other> cast() const {
    Parameters<Other> out(config_);
    for (std::size_t i = 0; i < size(); ++i) out[i] = tensors_[i].template cast<Other>();
    return out;
  }

 private:
  ModelConfig config_;
  ParameterLayout layout_;
  std::vector<Matrix<Scalar>> tensors_;
};

/// Random initialization from the "init" stream of `cfg.seed`.
template <class Scalar>
Parameters<Scalar> initialize_parameters(const ModelConfig& cfg);

/// Tensors belonging to the rationale classifier head.
bool is_classifier_tensor(const std::string& name);
bool is_rationale_embedding_tensor(const std::string& name);

extern template class Parameters<float>;
extern template class Parameters<double>;

}  // namespace rfid
