#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rfid/errors.hpp"
#include "rfid/random.hpp"
#include "rfid/training.hpp"

namespace rfid {

namespace {

struct Objective {
  std::vector<const EncodedExample*> batch;
  std::vector<int> preds;
  std::vector<int> labels;
  bool ratn_only = false;
  Variant variant = Variant::kRFiD;

  double operator()(const Parameters<double>& params) const {
    auto out = forward_batch<double>(params, batch, nullptr, &preds);
    const double ratn = rationale_loss<double>(out.rationale_logits, labels);
    if (ratn_only) return ratn;
    const auto gold = batch_targets(batch, out.target_len);
    const double fid = seq2seq_loss<double>(out.logits, gold);
    return total_loss(ratn, fid, variant).total;
  }
};

std::vector<Eigen::Index> sample_entries(const Matrix<double>& analytic, int samples,
                                         std::mt19937_64& rng) {
  const Eigen::Index n = analytic.size();
  std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  if (n <= samples) return all;
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<Eigen::Index> picked(all.begin(), all.begin() + samples);
  // Sparse gradients (embedding rows of absent tokens) would leave few live
  // entries in a uniform draw, so add up to `samples` nonzero ones as well.
  std::vector<Eigen::Index> live;
  for (auto it = all.begin() + samples; it != all.end(); ++it) {
    if (analytic.data()[*it] != 0.0) live.push_back(*it);
  }
  if (static_cast<int>(live.size()) > samples) live.resize(static_cast<std::size_t>(samples));
  picked.insert(picked.end(), live.begin(), live.end());
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace

GradientCheckReport gradient_check(const Parameters<double>& params,
                                   std::span<const EncodedExample> batch,
                                   const GradientCheckOptions& options) {
  require(!batch.empty(), "gradient_check: empty batch");
  require(options.step > 0.0, "gradient_check: step must be positive");

  Objective objective;
  for (const auto& ex : batch) objective.batch.push_back(&ex);
  objective.labels = batch_labels(objective.batch);
  objective.ratn_only = options.ratn_only;
  objective.variant = options.variant;

  BatchTape<double> tape;
  auto out = forward_batch<double>(params, objective.batch, &tape);
  objective.preds = out.preds;

  Matrix<double> d_ratn;
  rationale_loss<double>(out.rationale_logits, objective.labels, &d_ratn);
  if (!trains_classifier(options.variant)) d_ratn.setZero();
  Matrix<double> d_logits = Matrix<double>::Zero(out.logits.rows(), out.logits.cols());
  if (!options.ratn_only) {
    const auto gold = batch_targets(objective.batch, out.target_len);
    seq2seq_loss<double>(out.logits, gold, &d_logits);
  }
  Parameters<double> grads = params.zeros_like();
  backward_batch<double>(params, tape, d_ratn, d_logits, grads);

  const auto trainable = trainable_mask(params.layout(), options.variant);
  auto rng = make_rng(options.seed, "gradient-check");
  Parameters<double> probe = params;
  GradientCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (!trainable[t]) continue;
    TensorCheck check;
    check.name = params.name(t);
    for (Eigen::Index idx : sample_entries(grads[t], options.samples, rng)) {
      double& slot = probe[t].data()[idx];
      const double saved = slot;
      auto at = [&](double offset) {
        slot = saved + offset;
        const double value = objective(probe);
        slot = saved;
        return value;
      };
      const double h = options.step;
      const double near = at(h) - at(-h);
      const double numeric = options.fourth_order
                                 ? (8.0 * near - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
                                 : near / (2.0 * h);
      const double analytic = grads[t].data()[idx];
      const double abs_err = std::abs(analytic - numeric);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      const double rel = scale < options.floor ? abs_err / options.floor : abs_err / scale;
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      check.max_relative_error = std::max(check.max_relative_error, rel);
      ++check.checked;
    }
    check.passed = check.max_relative_error <= options.tolerance;
    report.max_relative_error = std::max(report.max_relative_error, check.max_relative_error);
    if (!check.passed) {
      report.passed = false;
      report.offending.push_back(check.name);
    }
    report.tensors.push_back(std::move(check));
  }
  return report;
}

}  // namespace rfid
