#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rfid/config.hpp"
#include "rfid/data.hpp"
#include "rfid/model.hpp"
#include "rfid/parameters.hpp"

namespace rfid {

struct LossBreakdown {
  double ratn = 0.0;
  double fid = 0.0;
  double total = 0.0;
};

/// total = ratn + fid. The FiD variant forces ratn to zero. Non-finite
/// inputs throw NumericError.
LossBreakdown total_loss(double ratn, double fid, Variant variant);

/// Mean softmax cross-entropy over rows of an (n x 2) logit matrix.
/// `grad`, when given, receives dLoss/dlogits.
template <class Scalar>
double rationale_loss(const Matrix<Scalar>& logits, std::span<const int> labels,
                      Matrix<Scalar>* grad = nullptr);

/// Mean token cross-entropy over rows whose gold id is not PAD.
template <class Scalar>
double seq2seq_loss(const Matrix<Scalar>& logits, std::span<const int> gold,
                    Matrix<Scalar>* grad = nullptr);

/// Gold targets of a batch laid out like BatchOutput::logits, PAD-filled.
std::vector<int> batch_targets(std::span<const EncodedExample* const> batch, int target_len);

/// Gold rationale labels of a batch, one per (example, passage).
std::vector<int> batch_labels(std::span<const EncodedExample* const> batch);

/// Tensors the variant never updates: the classifier head and E^ratn for
/// FiD, E^ratn alone for the unguided ablation.
std::vector<bool> trainable_mask(const ParameterLayout& layout, Variant variant);

struct AdamWOptions {
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with decoupled weight decay:
///   θ ← θ − lr · (m̂ / (√v̂ + ε) + wd · θ)
/// Tensors outside the trainable mask are left untouched.
template <class Scalar>
class AdamW {
 public:
  AdamW(const ModelConfig& cfg, AdamWOptions options, std::vector<bool> trainable);

  void step(Parameters<Scalar>& params, const Parameters<Scalar>& grads);

  long steps() const { return steps_; }
  void set_steps(long n) { steps_ = n; }
  Parameters<Scalar>& first_moment() { return m_; }
  Parameters<Scalar>& second_moment() { return v_; }
  const Parameters<Scalar>& first_moment() const { return m_; }
  const Parameters<Scalar>& second_moment() const { return v_; }
  const std::vector<bool>& trainable() const { return trainable_; }

 private:
  AdamWOptions options_;
  std::vector<bool> trainable_;
  Parameters<Scalar> m_, v_;
  long steps_ = 0;
};

/// One row of metrics.csv. Dev metrics are present only at logged steps
/// where evaluation ran; dev_ratn_acc stays empty for FiD.
struct LogRow {
  int step = 0;
  LossBreakdown loss;
  std::optional<double> dev_em;
  std::optional<double> dev_ratn_acc;
  double wall_clock_s = 0.0;
};

std::string metrics_header();
std::string format_log_row(const LogRow& row);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  bool resume = false;
  int stop_after = 0;             // >0: return after this step (simulated interruption)
  bool verbose = false;
};

struct TrainResult {
  ModelConfig model;
  std::vector<LogRow> log;
  std::vector<LossBreakdown> steps;  // one entry per update, in order
  Parameters<float> final_params;
  Parameters<float> best_params;
  double best_dev_em = -1.0;
  int best_step = -1;
  int completed_steps = 0;

  explicit TrainResult(const ModelConfig& cfg)
      : model(cfg), final_params(cfg), best_params(cfg) {}
};

/// Minibatch training of L_total. The model seed and `guide_decoder` are
/// taken from the TrainConfig. Writes metrics.csv, best.ckpt and last.ckpt
/// into `options.out_dir` when it is set.
TrainResult train(const std::vector<QAExample>& train_set, const std::vector<QAExample>& dev_set,
                  const Vocabulary& vocab, const TrainConfig& tcfg, ModelConfig mcfg,
                  const TrainOptions& options = {});

/// Index of the `step`-th batch (1-based) in a seed-determined epoch order.
std::vector<int> batch_indices(int dataset_size, int batch_size, std::uint64_t seed, int step);

// ---------------------------------------------------------------------------
// Gradient check

struct GradientCheckOptions {
  double step = 1e-3;
  /// Five-point central stencil (O(h^4)) instead of the two-point one (O(h^2)).
  bool fourth_order = true;
  int samples = 200;        // per tensor; small tensors are checked in full
  double tolerance = 1e-4;
  /// Entries whose analytic and numeric gradients are both below this are
  /// compared by absolute difference against `tolerance * floor`. Differences
  /// of an O(1) loss carry about 1e-12 of rounding noise, so exactly-zero
  /// gradients (key biases, for one) need a floor well above that.
  double floor = 1e-7;
  bool ratn_only = false;   // differentiate L_ratn alone
  Variant variant = Variant::kRFiD;
  std::uint64_t seed = 0;
};

struct TensorCheck {
  std::string name;
  int checked = 0;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradientCheckReport {
  std::vector<TensorCheck> tensors;  // frozen tensors are absent
  double max_relative_error = 0.0;
  bool passed = true;
  std::vector<std::string> offending;
};

/// Compares the analytic gradient of L_total against central finite
/// differences in double precision. pred_k is computed once at the given
/// parameters and held fixed for every perturbed evaluation.
GradientCheckReport gradient_check(const Parameters<double>& params,
                                   std::span<const EncodedExample> batch,
                                   const GradientCheckOptions& options);

}  // namespace rfid
