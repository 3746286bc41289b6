#include <cmath>

#include "rfid/errors.hpp"
#include "rfid/training.hpp"

namespace rfid {

LossBreakdown total_loss(double ratn, double fid, Variant variant) {
  if (!std::isfinite(ratn) || !std::isfinite(fid)) {
    throw NumericError("non-finite loss: L_ratn=" + std::to_string(ratn) +
                       " L_FiD=" + std::to_string(fid));
  }
  LossBreakdown out;
  out.ratn = trains_classifier(variant) ? ratn : 0.0;
  out.fid = fid;
  out.total = out.ratn + out.fid;
  return out;
}

template <class S>
double rationale_loss(const Matrix<S>& logits, std::span<const int> labels, Matrix<S>* grad) {
  require(logits.cols() == 2, "rationale_loss: logits must have two columns");
  require(static_cast<std::size_t>(logits.rows()) == labels.size(),
          "rationale_loss: label count mismatch");
  const auto n = logits.rows();
  if (grad) grad->setZero(n, 2);
  if (n == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    require(y == 0 || y == 1, "rationale_loss: label outside {0,1}");
    const double a = static_cast<double>(logits(r, 0));
    const double b = static_cast<double>(logits(r, 1));
    const double peak = std::max(a, b);
    const double lse = peak + std::log(std::exp(a - peak) + std::exp(b - peak));
    sum += lse - (y == 0 ? a : b);
    if (grad) {
      const double p0 = std::exp(a - lse);
      const double p1 = std::exp(b - lse);
      (*grad)(r, 0) = static_cast<S>((p0 - (y == 0 ? 1.0 : 0.0)) / static_cast<double>(n));
      (*grad)(r, 1) = static_cast<S>((p1 - (y == 1 ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  return sum / static_cast<double>(n);
}

template <class S>
double seq2seq_loss(const Matrix<S>& logits, std::span<const int> gold, Matrix<S>* grad) {
  require(static_cast<std::size_t>(logits.rows()) == gold.size(), "seq2seq_loss: length mismatch");
  if (grad) grad->setZero(logits.rows(), logits.cols());
  int count = 0;
  for (int g : gold) count += g != Vocabulary::kPad;
  if (count == 0) return 0.0;
  double sum = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int g = gold[static_cast<std::size_t>(r)];
    if (g == Vocabulary::kPad) continue;
    require(g >= 0 && g < logits.cols(), "seq2seq_loss: gold id out of range");
    const auto row = logits.row(r).template cast<double>();
    const double lse = log_sum_exp(row);
    sum += lse - row(g);
    if (grad) {
      auto out = grad->row(r);
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        out(c) = static_cast<S>(std::exp(row(c) - lse) / count);
      }
      out(g) -= static_cast<S>(1.0 / count);
    }
  }
  return sum / count;
}

std::vector<int> batch_targets(std::span<const EncodedExample* const> batch, int target_len) {
  std::vector<int> gold(batch.size() * static_cast<std::size_t>(target_len), Vocabulary::kPad);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& t = batch[b]->target;
    require(static_cast<int>(t.size()) <= target_len, "batch_targets: target too long");
    std::copy(t.begin(), t.end(), gold.begin() + static_cast<std::ptrdiff_t>(b * target_len));
  }
  return gold;
}

std::vector<int> batch_labels(std::span<const EncodedExample* const> batch) {
  std::vector<int> labels;
  for (const auto* ex : batch) {
    for (bool l : ex->labels) labels.push_back(l ? 1 : 0);
  }
  return labels;
}

template double rationale_loss<float>(const Matrix<float>&, std::span<const int>, Matrix<float>*);
template double rationale_loss<double>(const Matrix<double>&, std::span<const int>,
                                       Matrix<double>*);
template double seq2seq_loss<float>(const Matrix<float>&, std::span<const int>, Matrix<float>*);
template double seq2seq_loss<double>(const Matrix<double>&, std::span<const int>,
                                     Matrix<double>*);

}  // namespace rfid
