#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rfid/data.hpp"
#include "rfid/parameters.hpp"
#include "rfid/tensor.hpp"

namespace rfid {

/// Token ids for one question, ready for the network.
struct EncodedExample {
  std::vector<TokenizedPair> inputs;  // one per passage, each max_tokens long
  std::vector<int> decoder_input;     // BOS y1 .. yn
  std::vector<int> target;            // y1 .. yn EOS
  std::vector<bool> labels;
};

/// Formats and tokenizes every question-passage pair; the first gold answer
/// becomes the target, truncated to fit `max_target` decoder positions.
EncodedExample encode_example(const QAExample& example, const Vocabulary& vocab,
                              const ModelConfig& cfg);

template <class Scalar>
struct EncoderStates {
  Matrix<Scalar> hidden;  // max_tokens x d; row 0 feeds the classifier
  Mask valid;
};

template <class Scalar>
struct RationaleLogits {
  Matrix<Scalar> logits;   // passages x 2
  std::vector<int> preds;  // argmax per row, ties -> 0
};

/// Fused decoder memory: per passage the token states, followed by the
/// rationale embedding of its predicted label when guided.
template <class Scalar>
struct DecoderMemory {
  Matrix<Scalar> states;
  Mask valid;
  int passages = 0;
  int tokens = 0;  // L
  bool guided = false;

  int block_length() const { return guided ? tokens + 1 : tokens; }
  int length() const { return passages * block_length(); }
};

/// Post-softmax decoder cross-attention, indexed by (layer, head, step, memory position).
struct AttentionTrace {
  int layers = 0;
  int heads = 0;
  int steps = 0;
  int memory_length = 0;
  int passages = 0;
  int tokens = 0;
  bool guided = false;
  std::vector<Eigen::MatrixXd> scores;  // [layer * heads + head] is steps x memory_length

  double at(int layer, int head, int step, int position) const {
    return scores[static_cast<std::size_t>(layer * heads + head)](step, position);
  }
  int block_length() const { return guided ? tokens + 1 : tokens; }
  /// Memory row of token `j` of passage `k`.
  int position(int k, int j) const { return k * block_length() + j; }
  /// Memory row of the rationale slot of passage `k` (guided only).
  int guidance_position(int k) const { return k * block_length() + tokens; }
};

inline int predict_label(double spurious, double rational) { return rational > spurious ? 1 : 0; }

template <class Scalar>
std::vector<EncoderStates<Scalar>> encode(std::span<const TokenizedPair> pairs,
                                          const Parameters<Scalar>& params);

template <class Scalar>
RationaleLogits<Scalar> classify_rationale(std::span<const EncoderStates<Scalar>> states,
                                           const Parameters<Scalar>& params);

template <class Scalar>
DecoderMemory<Scalar> assemble_decoder_memory(std::span<const EncoderStates<Scalar>> states,
                                              std::span<const int> preds,
                                              const Matrix<Scalar>& rationale_table, bool guide);

template <class Scalar>
struct DecodeOutput {
  Matrix<Scalar> logits;  // prefix length x vocab
  std::optional<AttentionTrace> trace;
};

template <class Scalar>
DecodeOutput<Scalar> decode(std::span<const int> prefix, const DecoderMemory<Scalar>& memory,
                            const Parameters<Scalar>& params, bool trace);

template <class Scalar>
struct ForwardOutput {
  RationaleLogits<Scalar> rationale;
  Matrix<Scalar> logits;  // teacher-forced, decoder_input length x vocab
  AttentionTrace trace;
};

template <class Scalar>
ForwardOutput<Scalar> forward(const EncodedExample& example, const Parameters<Scalar>& params);

struct Generation {
  std::string text;
  std::vector<int> tokens;      // generated ids, EOS excluded
  std::vector<int> preds;       // predicted rationale label per passage
  Eigen::MatrixXd rationale_logits;
  AttentionTrace trace;         // one step per generated position, EOS step included
};

/// Greedy decoding from BOS until EOS or `max_len` tokens.
template <class Scalar>
Generation generate(std::string_view question, std::span<const Passage> passages,
                    const Vocabulary& vocab, const Parameters<Scalar>& params, int max_len);

// ---------------------------------------------------------------------------
// Batched training path

struct AttentionBlock {
  int query_begin = 0;
  int query_rows = 0;
  int key_begin = 0;
  int key_rows = 0;
  bool causal = false;
};

namespace detail {

template <class Scalar>
struct NormTape {
  Matrix<Scalar> normalized;
  ColVector<Scalar> inv_std;
};

template <class Scalar>
struct AttentionTape {
  Matrix<Scalar> query_input, key_input;
  Matrix<Scalar> q, k, v, concat;
  std::vector<Matrix<Scalar>> probs;  // [block * heads + head]
};

template <class Scalar>
struct FeedForwardTape {
  Matrix<Scalar> input, pre, act;
};

template <class Scalar>
struct EncoderLayerTape {
  NormTape<Scalar> norm1;
  AttentionTape<Scalar> attention;
  NormTape<Scalar> norm2;
  FeedForwardTape<Scalar> ffn;
};

template <class Scalar>
struct DecoderLayerTape {
  NormTape<Scalar> norm1;
  AttentionTape<Scalar> self_attention;
  NormTape<Scalar> norm2;
  AttentionTape<Scalar> cross_attention;
  NormTape<Scalar> norm3;
  FeedForwardTape<Scalar> ffn;
};

}  // namespace detail

/// Everything the backward pass needs from one batched forward pass.
template <class Scalar>
struct BatchTape {
  int batch = 0;
  int target_len = 0;
  std::vector<int> encoder_ids;
  Mask encoder_valid;
  std::vector<AttentionBlock> encoder_blocks;
  std::vector<detail::EncoderLayerTape<Scalar>> encoder_layers;
  detail::NormTape<Scalar> encoder_norm;
  Matrix<Scalar> encoder_out;
  std::vector<int> preds;
  Matrix<Scalar> memory;
  Mask memory_valid;
  std::vector<int> decoder_ids;
  std::vector<AttentionBlock> self_blocks, cross_blocks;
  std::vector<detail::DecoderLayerTape<Scalar>> decoder_layers;
  detail::NormTape<Scalar> decoder_norm;
  Matrix<Scalar> decoder_out;
};

template <class Scalar>
struct BatchOutput {
  Matrix<Scalar> rationale_logits;  // (batch * passages) x 2
  std::vector<int> preds;
  Matrix<Scalar> logits;            // (batch * target_len) x vocab
  int target_len = 0;
};

/// Teacher-forced forward over a batch. Targets shorter than the longest are
/// right-padded with PAD. `fixed_preds`, when given, replaces the argmax
/// predictions used for the rationale-embedding lookup.
template <class Scalar>
BatchOutput<Scalar> forward_batch(const Parameters<Scalar>& params,
                                  std::span<const EncodedExample* const> batch,
                                  BatchTape<Scalar>* tape,
                                  const std::vector<int>* fixed_preds = nullptr);

/// Accumulates dL/dθ into `grads`. The argmax lookup is not differentiated:
/// the classifier only receives gradient through `d_rationale_logits`.
template <class Scalar>
void backward_batch(const Parameters<Scalar>& params, const BatchTape<Scalar>& tape,
                    const Matrix<Scalar>& d_rationale_logits, const Matrix<Scalar>& d_logits,
                    Parameters<Scalar>& grads);

}  // namespace rfid
