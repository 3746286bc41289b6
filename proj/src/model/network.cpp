#include <algorithm>
#include <cmath>
#include <limits>

#include "rfid/errors.hpp"
#include "rfid/model.hpp"

namespace rfid {

namespace {

constexpr double kNormEpsilon = 1e-5;
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

template <class S>
using Mat = Matrix<S>;

// ---------------------------------------------------------------------------
// Primitive layers. Forward functions optionally record what their backward
// counterpart needs; backward functions accumulate parameter gradients.

template <class S>
Mat<S> linear(const Mat<S>& x, const Parameters<S>& p, LinearSlots s) {
  Mat<S> y(x.rows(), p[s.weight].cols());
  y.noalias() = x * p[s.weight];
  y.rowwise() += p[s.bias].row(0);
  return y;
}

template <class S>
Mat<S> linear_backward(const Mat<S>& x, const Mat<S>& dy, const Parameters<S>& p, LinearSlots s,
                       Parameters<S>& g) {
  g[s.weight].noalias() += x.transpose() * dy;
  g[s.bias].row(0) += dy.colwise().sum();
  Mat<S> dx(dy.rows(), x.cols());
  dx.noalias() = dy * p[s.weight].transpose();
  return dx;
}

template <class S>
Mat<S> layer_norm(const Mat<S>& x, const Parameters<S>& p, NormSlots s,
                  detail::NormTape<S>* tape) {
  const ColVector<S> mean = x.rowwise().mean();
  Mat<S> centered = x.colwise() - mean;
  const ColVector<S> var = centered.array().square().rowwise().mean();
  const ColVector<S> inv = (var.array() + static_cast<S>(kNormEpsilon)).rsqrt();
  Mat<S> normalized = centered.array().colwise() * inv.array();
  Mat<S> y = (normalized.array().rowwise() * p[s.gain].row(0).array()).rowwise() +
             p[s.bias].row(0).array();
  if (tape) {
    tape->normalized = std::move(normalized);
    tape->inv_std = inv;
  }
  return y;
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Parameters<S>& p, NormSlots s,
                           const detail::NormTape<S>& t, Parameters<S>& g) {
  const auto& xhat = t.normalized;
  g[s.gain].row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  g[s.bias].row(0) += dy.colwise().sum();
  const Mat<S> dxhat = dy.array().rowwise() * p[s.gain].row(0).array();
  const ColVector<S> mean_d = dxhat.rowwise().mean();
  const ColVector<S> mean_dx = (dxhat.array() * xhat.array()).rowwise().mean();
  Mat<S> dx = (dxhat.colwise() - mean_d).array() - xhat.array().colwise() * mean_dx.array();
  dx.array().colwise() *= t.inv_std.array();
  return dx;
}

template <class S>
S gelu(S x) {
  const S u = static_cast<S>(kGeluScale) * (x + static_cast<S>(kGeluCubic) * x * x * x);
  return static_cast<S>(0.5) * x * (static_cast<S>(1) + std::tanh(u));
}

template <class S>
S gelu_derivative(S x) {
  const S x2 = x * x;
  const S u = static_cast<S>(kGeluScale) * (x + static_cast<S>(kGeluCubic) * x * x2);
  const S t = std::tanh(u);
  const S du = static_cast<S>(kGeluScale) * (static_cast<S>(1) + static_cast<S>(3 * kGeluCubic) * x2);
  return static_cast<S>(0.5) * (static_cast<S>(1) + t) +
         static_cast<S>(0.5) * x * (static_cast<S>(1) - t * t) * du;
}

template <class S>
Mat<S> feed_forward(const Mat<S>& x, const Parameters<S>& p, const FeedForwardSlots& s,
                    detail::FeedForwardTape<S>* tape) {
  Mat<S> pre = linear(x, p, s.in);
  Mat<S> act = pre.unaryExpr([](S v) { return gelu(v); });
  Mat<S> y = linear(act, p, s.out);
  if (tape) {
    tape->input = x;
    tape->pre = std::move(pre);
    tape->act = std::move(act);
  }
  return y;
}

template <class S>
Mat<S> feed_forward_backward(const Mat<S>& dy, const Parameters<S>& p, const FeedForwardSlots& s,
                             const detail::FeedForwardTape<S>& t, Parameters<S>& g) {
  Mat<S> dact = linear_backward(t.act, dy, p, s.out, g);
  dact.array() *= t.pre.unaryExpr([](S v) { return gelu_derivative(v); }).array();
  return linear_backward(t.input, dact, p, s.in, g);
}

/// Multi-head attention over independent (query rows, key rows) blocks.
/// Keys with `key_valid == false` receive zero probability.
template <class S>
Mat<S> attention(const Mat<S>& xq, const Mat<S>& xkv, const Parameters<S>& p,
                 const AttentionSlots& s, int heads, std::span<const AttentionBlock> blocks,
                 const Mask& key_valid, detail::AttentionTape<S>* tape,
                 std::vector<Mat<S>>* probs_out) {
  Mat<S> q = linear(xq, p, s.query);
  Mat<S> k = linear(xkv, p, s.key);
  Mat<S> v = linear(xkv, p, s.value);
  const int width = static_cast<int>(q.cols());
  const int dh = width / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  constexpr S kMasked = -std::numeric_limits<S>::infinity();

  Mat<S> concat = Mat<S>::Zero(xq.rows(), width);
  std::vector<Mat<S>> probs;
  probs.reserve(blocks.size() * static_cast<std::size_t>(heads));
  for (const auto& b : blocks) {
    for (int h = 0; h < heads; ++h) {
      Mat<S> scores(b.query_rows, b.key_rows);
      scores.noalias() = q.block(b.query_begin, h * dh, b.query_rows, dh) *
                         k.block(b.key_begin, h * dh, b.key_rows, dh).transpose();
      scores *= scale;
      for (int j = 0; j < b.key_rows; ++j) {
        if (!key_valid[static_cast<std::size_t>(b.key_begin + j)]) scores.col(j).setConstant(kMasked);
      }
      if (b.causal) {
        for (int i = 0; i < b.query_rows; ++i) {
          for (int j = i + 1; j < b.key_rows; ++j) scores(i, j) = kMasked;
        }
      }
      softmax_rows_inplace(scores);
      concat.block(b.query_begin, h * dh, b.query_rows, dh).noalias() =
          scores * v.block(b.key_begin, h * dh, b.key_rows, dh);
      probs.push_back(std::move(scores));
    }
  }
  Mat<S> out = linear(concat, p, s.output);
  if (tape) {
    tape->query_input = xq;
    tape->key_input = xkv;
    tape->q = std::move(q);
    tape->k = std::move(k);
    tape->v = std::move(v);
    tape->concat = std::move(concat);
    tape->probs = std::move(probs);
    if (probs_out) *probs_out = tape->probs;
  } else if (probs_out) {
    *probs_out = std::move(probs);
  }
  return out;
}

/// Accumulates (+=) the input gradients into `dxq` and `dxkv`, which may alias.
template <class S>
void attention_backward(const Mat<S>& dy, const Parameters<S>& p, const AttentionSlots& s,
                        int heads, std::span<const AttentionBlock> blocks,
                        const detail::AttentionTape<S>& t, Parameters<S>& g, Mat<S>& dxq,
                        Mat<S>& dxkv) {
  const Mat<S> dconcat = linear_backward(t.concat, dy, p, s.output, g);
  const int width = static_cast<int>(t.q.cols());
  const int dh = width / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  Mat<S> dq = Mat<S>::Zero(t.q.rows(), width);
  Mat<S> dk = Mat<S>::Zero(t.k.rows(), width);
  Mat<S> dv = Mat<S>::Zero(t.v.rows(), width);
  std::size_t idx = 0;
  for (const auto& b : blocks) {
    for (int h = 0; h < heads; ++h, ++idx) {
      const Mat<S>& prob = t.probs[idx];
      const auto d_out = dconcat.block(b.query_begin, h * dh, b.query_rows, dh);
      Mat<S> d_prob(b.query_rows, b.key_rows);
      d_prob.noalias() = d_out * t.v.block(b.key_begin, h * dh, b.key_rows, dh).transpose();
      dv.block(b.key_begin, h * dh, b.key_rows, dh).noalias() += prob.transpose() * d_out;
      const ColVector<S> row_dot = (d_prob.array() * prob.array()).rowwise().sum();
      Mat<S> d_scores = prob.array() * (d_prob.colwise() - row_dot).array();
      d_scores *= scale;
      dq.block(b.query_begin, h * dh, b.query_rows, dh).noalias() +=
          d_scores * t.k.block(b.key_begin, h * dh, b.key_rows, dh);
      dk.block(b.key_begin, h * dh, b.key_rows, dh).noalias() +=
          d_scores.transpose() * t.q.block(b.query_begin, h * dh, b.query_rows, dh);
    }
  }
  dxq += linear_backward(t.query_input, dq, p, s.query, g);
  dxkv += linear_backward(t.key_input, dk, p, s.key, g);
  dxkv += linear_backward(t.key_input, dv, p, s.value, g);
}

template <class S>
Mat<S> embed(const Parameters<S>& p, int table, const std::vector<int>& ids, int period) {
  const auto& emb = p[static_cast<std::size_t>(table)];
  const Mat<S> positions = sinusoidal_positions<S>(period, static_cast<int>(emb.cols()));
  Mat<S> x(static_cast<Eigen::Index>(ids.size()), emb.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    x.row(static_cast<Eigen::Index>(r)) =
        emb.row(ids[r]) + positions.row(static_cast<Eigen::Index>(r % static_cast<std::size_t>(period)));
  }
  return x;
}

template <class S>
void embed_backward(const Mat<S>& dx, int table, const std::vector<int>& ids, Parameters<S>& g) {
  auto& demb = g[static_cast<std::size_t>(table)];
  for (std::size_t r = 0; r < ids.size(); ++r) demb.row(ids[r]) += dx.row(static_cast<Eigen::Index>(r));
}

// ---------------------------------------------------------------------------
// Stacks

std::vector<AttentionBlock> passage_blocks(int passages, int tokens) {
  std::vector<AttentionBlock> blocks;
  for (int k = 0; k < passages; ++k) blocks.push_back({k * tokens, tokens, k * tokens, tokens, false});
  return blocks;
}

/// Encodes `ids.size() / tokens` passages at once; all share the same weights.
template <class S>
Mat<S> encoder_stack(const Parameters<S>& p, const std::vector<int>& ids, const Mask& valid,
                     int tokens, BatchTape<S>* tape) {
  const auto& cfg = p.config();
  const auto& layout = p.layout();
  const int passages = static_cast<int>(ids.size()) / tokens;
  const auto blocks = passage_blocks(passages, tokens);
  Mat<S> x = embed(p, layout.encoder_embedding, ids, tokens);
  if (tape) {
    tape->encoder_layers.assign(layout.encoder_layers.size(), {});
    tape->encoder_blocks = blocks;
  }
  for (std::size_t l = 0; l < layout.encoder_layers.size(); ++l) {
    const auto& s = layout.encoder_layers[l];
    auto* lt = tape ? &tape->encoder_layers[l] : nullptr;
    const Mat<S> n1 = layer_norm(x, p, s.norm1, lt ? &lt->norm1 : nullptr);
    x += attention<S>(n1, n1, p, s.self_attention, cfg.heads, blocks, valid,
                   lt ? &lt->attention : nullptr, nullptr);
    const Mat<S> n2 = layer_norm(x, p, s.norm2, lt ? &lt->norm2 : nullptr);
    x += feed_forward(n2, p, s.ffn, lt ? &lt->ffn : nullptr);
  }
  return layer_norm(x, p, layout.encoder_norm, tape ? &tape->encoder_norm : nullptr);
}

/// Decoder over `batch` examples of `target_len` positions each, example b
/// reading memory rows [b * memory_len, (b + 1) * memory_len). Returns the
/// final normalized states; `cross_probs[l]` receives layer l's attention.
template <class S>
Mat<S> decoder_stack(const Parameters<S>& p, const std::vector<int>& ids, int batch,
                     int target_len, const Mat<S>& memory, const Mask& memory_valid,
                     int memory_len, BatchTape<S>* tape,
                     std::vector<std::vector<Mat<S>>>* cross_probs) {
  const auto& cfg = p.config();
  const auto& layout = p.layout();
  std::vector<AttentionBlock> self_blocks, cross_blocks;
  for (int b = 0; b < batch; ++b) {
    self_blocks.push_back({b * target_len, target_len, b * target_len, target_len, true});
    cross_blocks.push_back({b * target_len, target_len, b * memory_len, memory_len, false});
  }
  const Mask self_valid(ids.size(), true);
  Mat<S> x = embed(p, layout.decoder_embedding, ids, target_len);
  if (tape) {
    tape->decoder_layers.assign(layout.decoder_layers.size(), {});
    tape->self_blocks = self_blocks;
    tape->cross_blocks = cross_blocks;
  }
  if (cross_probs) cross_probs->assign(layout.decoder_layers.size(), {});
  for (std::size_t l = 0; l < layout.decoder_layers.size(); ++l) {
    const auto& s = layout.decoder_layers[l];
    auto* lt = tape ? &tape->decoder_layers[l] : nullptr;
    const Mat<S> n1 = layer_norm(x, p, s.norm1, lt ? &lt->norm1 : nullptr);
    x += attention<S>(n1, n1, p, s.self_attention, cfg.heads, self_blocks, self_valid,
                   lt ? &lt->self_attention : nullptr, nullptr);
    const Mat<S> n2 = layer_norm(x, p, s.norm2, lt ? &lt->norm2 : nullptr);
    x += attention<S>(n2, memory, p, s.cross_attention, cfg.heads, cross_blocks, memory_valid,
                   lt ? &lt->cross_attention : nullptr,
                   cross_probs ? &(*cross_probs)[l] : nullptr);
    const Mat<S> n3 = layer_norm(x, p, s.norm3, lt ? &lt->norm3 : nullptr);
    x += feed_forward(n3, p, s.ffn, lt ? &lt->ffn : nullptr);
  }
  return layer_norm(x, p, layout.decoder_norm, tape ? &tape->decoder_norm : nullptr);
}

template <class S>
Mat<S> rationale_head(const Parameters<S>& p, const Mat<S>& encoder_out, int passages,
                      int tokens) {
  const auto& layout = p.layout();
  const auto& w = p[static_cast<std::size_t>(layout.classifier_weight)];
  const auto& bias = p[static_cast<std::size_t>(layout.classifier_bias)];
  Mat<S> logits(passages, 2);
  for (int k = 0; k < passages; ++k) {
    logits.row(k).noalias() = encoder_out.row(k * tokens) * w.transpose();
    logits.row(k) += bias.row(0);
  }
  return logits;
}

std::vector<int> argmax_labels(const auto& logits) {
  std::vector<int> preds;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    preds.push_back(predict_label(static_cast<double>(logits(r, 0)),
                                  static_cast<double>(logits(r, 1))));
  }
  return preds;
}

/// Builds fused memory for `groups` examples of `passages` blocks each.
template <class S>
void fuse_memory(const Mat<S>& encoder_out, const Mask& encoder_valid, std::span<const int> preds,
                 const Mat<S>& table, int groups, int passages, int tokens, bool guide,
                 Mat<S>& memory, Mask& valid) {
  for (int pred : preds) require(pred == 0 || pred == 1, "rationale prediction must be 0 or 1");
  const int block = guide ? tokens + 1 : tokens;
  const int memory_len = passages * block;
  memory.resize(static_cast<Eigen::Index>(groups) * memory_len, encoder_out.cols());
  valid.assign(static_cast<std::size_t>(groups * memory_len), false);
  for (int g = 0; g < groups; ++g) {
    for (int k = 0; k < passages; ++k) {
      const int src = (g * passages + k) * tokens;
      const int dst = g * memory_len + k * block;
      memory.middleRows(dst, tokens) = encoder_out.middleRows(src, tokens);
      for (int j = 0; j < tokens; ++j) {
        valid[static_cast<std::size_t>(dst + j)] = encoder_valid[static_cast<std::size_t>(src + j)];
      }
      if (guide) {
        memory.row(dst + tokens) = table.row(preds[static_cast<std::size_t>(g * passages + k)]);
        valid[static_cast<std::size_t>(dst + tokens)] = true;
      }
    }
  }
}

template <class S>
AttentionTrace make_trace(const std::vector<std::vector<Mat<S>>>& cross_probs, int heads,
                          int steps, int passages, int tokens, bool guided) {
  AttentionTrace trace;
  trace.layers = static_cast<int>(cross_probs.size());
  trace.heads = heads;
  trace.steps = steps;
  trace.passages = passages;
  trace.tokens = tokens;
  trace.guided = guided;
  trace.memory_length = passages * trace.block_length();
  for (const auto& layer : cross_probs) {
    for (int h = 0; h < heads; ++h) {
      trace.scores.push_back(layer[static_cast<std::size_t>(h)].topRows(steps).template cast<double>());
    }
  }
  return trace;
}

void check_ids(const std::vector<int>& ids, int vocab_size) {
  for (int id : ids) {
    if (id < 0 || id >= vocab_size) {
      throw ConfigError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(vocab_size));
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

EncodedExample encode_example(const QAExample& example, const Vocabulary& vocab,
                              const ModelConfig& cfg) {
  if (static_cast<int>(example.passages.size()) != cfg.passages) {
    throw ConfigError("example " + example.id + " has " + std::to_string(example.passages.size()) +
                      " passages, model expects " + std::to_string(cfg.passages));
  }
  EncodedExample out;
  for (const auto& p : example.passages) {
    out.inputs.push_back(tokenize(format_input(example.question, p), vocab, cfg.max_tokens));
  }
  std::vector<int> answer =
      example.answers.empty() ? std::vector<int>{} : encode_answer(example.answers.front(), vocab);
  if (static_cast<int>(answer.size()) > cfg.max_target - 1) {
    answer.resize(static_cast<std::size_t>(cfg.max_target - 1));
  }
  out.decoder_input.push_back(Vocabulary::kBos);
  out.decoder_input.insert(out.decoder_input.end(), answer.begin(), answer.end());
  out.target = answer;
  out.target.push_back(Vocabulary::kEos);
  out.labels = example.labels;
  return out;
}

template <class S>
std::vector<EncoderStates<S>> encode(std::span<const TokenizedPair> pairs,
                                     const Parameters<S>& params) {
  const auto& cfg = params.config();
  if (static_cast<int>(pairs.size()) != cfg.passages) {
    throw ConfigError("encode: expected " + std::to_string(cfg.passages) + " passages, got " +
                      std::to_string(pairs.size()));
  }
  std::vector<int> ids;
  Mask valid;
  for (const auto& pair : pairs) {
    if (static_cast<int>(pair.ids.size()) != cfg.max_tokens ||
        pair.attention_mask.size() != pair.ids.size()) {
      throw ConfigError("encode: every passage must hold exactly max_tokens ids");
    }
    ids.insert(ids.end(), pair.ids.begin(), pair.ids.end());
    valid.insert(valid.end(), pair.attention_mask.begin(), pair.attention_mask.end());
  }
  check_ids(ids, cfg.vocab_size);
  const Mat<S> out = encoder_stack<S>(params, ids, valid, cfg.max_tokens, nullptr);
  std::vector<EncoderStates<S>> states;
  for (int k = 0; k < cfg.passages; ++k) {
    EncoderStates<S> st;
    st.hidden = out.middleRows(k * cfg.max_tokens, cfg.max_tokens);
    st.valid.assign(valid.begin() + k * cfg.max_tokens, valid.begin() + (k + 1) * cfg.max_tokens);
    states.push_back(std::move(st));
  }
  return states;
}

template <class S>
RationaleLogits<S> classify_rationale(std::span<const EncoderStates<S>> states,
                                      const Parameters<S>& params) {
  const auto& layout = params.layout();
  const auto& w = params[static_cast<std::size_t>(layout.classifier_weight)];
  const auto& bias = params[static_cast<std::size_t>(layout.classifier_bias)];
  RationaleLogits<S> out;
  out.logits.resize(static_cast<Eigen::Index>(states.size()), 2);
  for (std::size_t k = 0; k < states.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    out.logits.row(r).noalias() = states[k].hidden.row(0) * w.transpose();
    out.logits.row(r) += bias.row(0);
  }
  out.preds = argmax_labels(out.logits);
  return out;
}

template <class S>
DecoderMemory<S> assemble_decoder_memory(std::span<const EncoderStates<S>> states,
                                         std::span<const int> preds, const Mat<S>& table,
                                         bool guide) {
  require(states.size() == preds.size(), "assemble_decoder_memory: one prediction per passage");
  require(!states.empty(), "assemble_decoder_memory: no passages");
  require(table.rows() == 2, "rationale table must have two rows");
  const int tokens = static_cast<int>(states.front().hidden.rows());
  Mat<S> stacked(static_cast<Eigen::Index>(states.size()) * tokens, states.front().hidden.cols());
  Mask valid;
  for (std::size_t k = 0; k < states.size(); ++k) {
    require(states[k].hidden.rows() == tokens, "assemble_decoder_memory: ragged passages");
    stacked.middleRows(static_cast<Eigen::Index>(k) * tokens, tokens) = states[k].hidden;
    valid.insert(valid.end(), states[k].valid.begin(), states[k].valid.end());
  }
  DecoderMemory<S> memory;
  memory.passages = static_cast<int>(states.size());
  memory.tokens = tokens;
  memory.guided = guide;
  fuse_memory<S>(stacked, valid, preds, table, 1, memory.passages, tokens, guide, memory.states,
                 memory.valid);
  return memory;
}

template <class S>
DecodeOutput<S> decode(std::span<const int> prefix, const DecoderMemory<S>& memory,
                       const Parameters<S>& params, bool trace) {
  const auto& cfg = params.config();
  require(!prefix.empty() && prefix.front() == Vocabulary::kBos, "decode: prefix must start with BOS");
  require(static_cast<int>(prefix.size()) <= cfg.max_target,
          "decode: prefix longer than max_target");
  require(memory.states.rows() == memory.length(), "decode: memory shape mismatch");
  const std::vector<int> ids(prefix.begin(), prefix.end());
  check_ids(ids, cfg.vocab_size);
  const int steps = static_cast<int>(ids.size());
  std::vector<std::vector<Mat<S>>> probs;
  const Mat<S> hidden = decoder_stack<S>(params, ids, 1, steps, memory.states, memory.valid,
                                         memory.length(), nullptr, trace ? &probs : nullptr);
  DecodeOutput<S> out;
  out.logits = linear(hidden, params, params.layout().lm_head);
  if (trace) {
    out.trace = make_trace(probs, cfg.heads, steps, memory.passages, memory.tokens, memory.guided);
  }
  return out;
}

template <class S>
ForwardOutput<S> forward(const EncodedExample& example, const Parameters<S>& params) {
  const auto states = encode<S>(example.inputs, params);
  ForwardOutput<S> out;
  out.rationale = classify_rationale<S>(states, params);
  const auto& table = params[static_cast<std::size_t>(params.layout().rationale_embedding)];
  const auto memory = assemble_decoder_memory<S>(states, out.rationale.preds, table,
                                                 params.config().guide_decoder);
  auto decoded = decode<S>(example.decoder_input, memory, params, true);
  out.logits = std::move(decoded.logits);
  out.trace = std::move(*decoded.trace);
  return out;
}

template <class S>
Generation generate(std::string_view question, std::span<const Passage> passages,
                    const Vocabulary& vocab, const Parameters<S>& params, int max_len) {
  const auto& cfg = params.config();
  std::vector<TokenizedPair> pairs;
  for (const auto& p : passages) pairs.push_back(tokenize(format_input(question, p), vocab, cfg.max_tokens));
  const auto states = encode<S>(pairs, params);
  const auto rationale = classify_rationale<S>(states, params);
  const auto& table = params[static_cast<std::size_t>(params.layout().rationale_embedding)];
  const auto memory = assemble_decoder_memory<S>(states, rationale.preds, table, cfg.guide_decoder);

  Generation gen;
  gen.preds = rationale.preds;
  gen.rationale_logits = rationale.logits.template cast<double>();
  const int limit = std::min(max_len, cfg.max_target);
  std::vector<int> prefix{Vocabulary::kBos};
  int steps = 0;
  while (steps < limit) {
    const auto out = decode<S>(prefix, memory, params, false);
    const int next = argmax(out.logits.row(out.logits.rows() - 1));
    ++steps;
    if (next == Vocabulary::kEos) break;
    gen.tokens.push_back(next);
    if (steps == limit) break;
    prefix.push_back(next);
  }
  if (steps > 0) {
    gen.trace = std::move(*decode<S>(prefix, memory, params, true).trace);
  } else {
    gen.trace.layers = cfg.dec_layers;
    gen.trace.heads = cfg.heads;
    gen.trace.passages = memory.passages;
    gen.trace.tokens = memory.tokens;
    gen.trace.guided = memory.guided;
    gen.trace.memory_length = memory.length();
    gen.trace.scores.assign(static_cast<std::size_t>(cfg.dec_layers * cfg.heads),
                            Eigen::MatrixXd(0, memory.length()));
  }
  gen.text = detokenize(gen.tokens, vocab);
  return gen;
}

template <class S>
BatchOutput<S> forward_batch(const Parameters<S>& params,
                             std::span<const EncodedExample* const> batch, BatchTape<S>* tape,
                             const std::vector<int>* fixed_preds) {
  const auto& cfg = params.config();
  const auto& layout = params.layout();
  require(!batch.empty(), "forward_batch: empty batch");
  const int n = static_cast<int>(batch.size());
  const int K = cfg.passages;
  const int L = cfg.max_tokens;

  std::vector<int> enc_ids;
  Mask enc_valid;
  int target_len = 0;
  for (const auto* ex : batch) {
    if (static_cast<int>(ex->inputs.size()) != K) throw ConfigError("forward_batch: wrong passage count");
    for (const auto& pair : ex->inputs) {
      if (static_cast<int>(pair.ids.size()) != L) throw ConfigError("forward_batch: wrong passage length");
      enc_ids.insert(enc_ids.end(), pair.ids.begin(), pair.ids.end());
      enc_valid.insert(enc_valid.end(), pair.attention_mask.begin(), pair.attention_mask.end());
    }
    require(ex->decoder_input.size() == ex->target.size(), "forward_batch: target misaligned");
    require(static_cast<int>(ex->decoder_input.size()) <= cfg.max_target,
            "forward_batch: target longer than max_target");
    target_len = std::max(target_len, static_cast<int>(ex->decoder_input.size()));
  }
  check_ids(enc_ids, cfg.vocab_size);

  BatchOutput<S> out;
  out.target_len = target_len;
  Mat<S> encoder_out = encoder_stack<S>(params, enc_ids, enc_valid, L, tape);

  out.rationale_logits = rationale_head<S>(params, encoder_out, n * K, L);
  if (fixed_preds) {
    require(static_cast<int>(fixed_preds->size()) == n * K, "forward_batch: fixed_preds size");
    out.preds = *fixed_preds;
  } else {
    out.preds = argmax_labels(out.rationale_logits);
  }

  Mat<S> memory;
  Mask memory_valid;
  fuse_memory<S>(encoder_out, enc_valid, out.preds,
                 params[static_cast<std::size_t>(layout.rationale_embedding)], n, K, L,
                 cfg.guide_decoder, memory, memory_valid);

  std::vector<int> dec_ids(static_cast<std::size_t>(n * target_len), Vocabulary::kPad);
  for (int b = 0; b < n; ++b) {
    const auto& in = batch[static_cast<std::size_t>(b)]->decoder_input;
    std::copy(in.begin(), in.end(), dec_ids.begin() + b * target_len);
  }
  check_ids(dec_ids, cfg.vocab_size);
  Mat<S> hidden = decoder_stack<S>(params, dec_ids, n, target_len, memory, memory_valid,
                                   cfg.memory_length(), tape, nullptr);
  out.logits = linear(hidden, params, layout.lm_head);

  if (tape) {
    tape->batch = n;
    tape->target_len = target_len;
    tape->encoder_ids = std::move(enc_ids);
    tape->encoder_valid = std::move(enc_valid);
    tape->encoder_out = std::move(encoder_out);
    tape->preds = out.preds;
    tape->memory = std::move(memory);
    tape->memory_valid = std::move(memory_valid);
    tape->decoder_ids = std::move(dec_ids);
    tape->decoder_out = std::move(hidden);
  }
  return out;
}

template <class S>
void backward_batch(const Parameters<S>& params, const BatchTape<S>& tape,
                    const Mat<S>& d_rationale_logits, const Mat<S>& d_logits, Parameters<S>& grads) {
  const auto& cfg = params.config();
  const auto& layout = params.layout();
  const int K = cfg.passages;
  const int L = cfg.max_tokens;
  const int d = cfg.hidden;
  require(d_logits.rows() == static_cast<Eigen::Index>(tape.batch) * tape.target_len,
          "backward_batch: d_logits shape");
  require(d_rationale_logits.rows() == static_cast<Eigen::Index>(tape.batch) * K,
          "backward_batch: d_rationale_logits shape");

  // Decoder.
  Mat<S> dx = linear_backward(tape.decoder_out, d_logits, params, layout.lm_head, grads);
  dx = layer_norm_backward(dx, params, layout.decoder_norm, tape.decoder_norm, grads);
  Mat<S> d_memory = Mat<S>::Zero(tape.memory.rows(), d);
  for (std::size_t l = layout.decoder_layers.size(); l-- > 0;) {
    const auto& s = layout.decoder_layers[l];
    const auto& lt = tape.decoder_layers[l];
    dx += layer_norm_backward(feed_forward_backward(dx, params, s.ffn, lt.ffn, grads), params,
                              s.norm3, lt.norm3, grads);
    Mat<S> dn2 = Mat<S>::Zero(dx.rows(), d);
    attention_backward(dx, params, s.cross_attention, cfg.heads, tape.cross_blocks,
                       lt.cross_attention, grads, dn2, d_memory);
    dx += layer_norm_backward(dn2, params, s.norm2, lt.norm2, grads);
    Mat<S> dn1 = Mat<S>::Zero(dx.rows(), d);
    attention_backward(dx, params, s.self_attention, cfg.heads, tape.self_blocks,
                       lt.self_attention, grads, dn1, dn1);
    dx += layer_norm_backward(dn1, params, s.norm1, lt.norm1, grads);
  }
  embed_backward(dx, layout.decoder_embedding, tape.decoder_ids, grads);

  // Memory back to encoder states and the rationale table.
  const int block = cfg.block_length();
  const int memory_len = cfg.memory_length();
  Mat<S> d_enc = Mat<S>::Zero(tape.encoder_out.rows(), d);
  auto& d_table = grads[static_cast<std::size_t>(layout.rationale_embedding)];
  for (int g = 0; g < tape.batch; ++g) {
    for (int k = 0; k < K; ++k) {
      const int src = (g * K + k) * L;
      const int dst = g * memory_len + k * block;
      d_enc.middleRows(src, L) += d_memory.middleRows(dst, L);
      if (cfg.guide_decoder) {
        d_table.row(tape.preds[static_cast<std::size_t>(g * K + k)]) += d_memory.row(dst + L);
      }
    }
  }

  // Classifier on the first token of every passage.
  const auto& w = params[static_cast<std::size_t>(layout.classifier_weight)];
  auto& dw = grads[static_cast<std::size_t>(layout.classifier_weight)];
  auto& db = grads[static_cast<std::size_t>(layout.classifier_bias)];
  for (int r = 0; r < tape.batch * K; ++r) {
    const auto dl = d_rationale_logits.row(r);
    dw.noalias() += dl.transpose() * tape.encoder_out.row(r * L);
    db.row(0) += dl;
    d_enc.row(r * L).noalias() += dl * w;
  }

  // Encoder.
  dx = layer_norm_backward(d_enc, params, layout.encoder_norm, tape.encoder_norm, grads);
  for (std::size_t l = layout.encoder_layers.size(); l-- > 0;) {
    const auto& s = layout.encoder_layers[l];
    const auto& lt = tape.encoder_layers[l];
    dx += layer_norm_backward(feed_forward_backward(dx, params, s.ffn, lt.ffn, grads), params,
                              s.norm2, lt.norm2, grads);
    Mat<S> dn1 = Mat<S>::Zero(dx.rows(), d);
    attention_backward(dx, params, s.self_attention, cfg.heads, tape.encoder_blocks,
                       lt.attention, grads, dn1, dn1);
    dx += layer_norm_backward(dn1, params, s.norm1, lt.norm1, grads);
  }
  embed_backward(dx, layout.encoder_embedding, tape.encoder_ids, grads);
}

#define RFID_INSTANTIATE(S)                                                                      \
  template std::vector<EncoderStates<S>> encode<S>(std::span<const TokenizedPair>,               \
                                                   const Parameters<S>&);                        \
  template RationaleLogits<S> classify_rationale<S>(std::span<const EncoderStates<S>>,           \
                                                    const Parameters<S>&);                       \
  template DecoderMemory<S> assemble_decoder_memory<S>(std::span<const EncoderStates<S>>,        \
                                                       std::span<const int>, const Mat<S>&,      \
                                                       bool);                                    \
  template DecodeOutput<S> decode<S>(std::span<const int>, const DecoderMemory<S>&,              \
                                     const Parameters<S>&, bool);                                \
  template ForwardOutput<S> forward<S>(const EncodedExample&, const Parameters<S>&);             \
  template Generation generate<S>(std::string_view, std::span<const Passage>, const Vocabulary&, \
                                  const Parameters<S>&, int);                                    \
  template BatchOutput<S> forward_batch<S>(const Parameters<S>&,                                 \
                                           std::span<const EncodedExample* const>,               \
                                           BatchTape<S>*, const std::vector<int>*);              \
  template void backward_batch<S>(const Parameters<S>&, const BatchTape<S>&, const Mat<S>&,      \
                                  const Mat<S>&, Parameters<S>&);

RFID_INSTANTIATE(float)
RFID_INSTANTIATE(double)

#undef RFID_INSTANTIATE

}  // namespace rfid
