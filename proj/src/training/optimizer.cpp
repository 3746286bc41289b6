#include <cmath>

#include "rfid/errors.hpp"
#include "rfid/training.hpp"

namespace rfid {

std::vector<bool> trainable_mask(const ParameterLayout& layout, Variant variant) {
  std::vector<bool> mask(layout.specs.size(), true);
  for (std::size_t i = 0; i < layout.specs.size(); ++i) {
    const auto& name = layout.specs[i].name;
    if (variant == Variant::kFiD && is_classifier_tensor(name)) mask[i] = false;
    if (!guides_decoder(variant) && is_rationale_embedding_tensor(name)) mask[i] = false;
  }
  return mask;
}

template <class S>
AdamW<S>::AdamW(const ModelConfig& cfg, AdamWOptions options, std::vector<bool> trainable)
    : options_(options), trainable_(std::move(trainable)), m_(cfg), v_(cfg) {
  require(trainable_.size() == m_.size(), "AdamW: trainable mask size mismatch");
}

template <class S>
void AdamW<S>::step(Parameters<S>& params, const Parameters<S>& grads) {
  require(params.size() == grads.size() && params.size() == m_.size(),
          "AdamW: parameter count mismatch");
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const S c1 = static_cast<S>(1.0 / (1.0 - std::pow(b1, static_cast<double>(steps_))));
  const S c2 = static_cast<S>(1.0 / (1.0 - std::pow(b2, static_cast<double>(steps_))));
  const S lr = static_cast<S>(options_.learning_rate);
  const S wd = static_cast<S>(options_.weight_decay);
  const S eps = static_cast<S>(options_.epsilon);
  const S sb1 = static_cast<S>(b1);
  const S sb2 = static_cast<S>(b2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!trainable_[i]) continue;
    auto m = m_[i].array();
    auto v = v_[i].array();
    const auto g = grads[i].array();
    m = sb1 * m + (S(1) - sb1) * g;
    v = sb2 * v + (S(1) - sb2) * g.square();
    auto theta = params[i].array();
    theta -= lr * ((m * c1) / ((v * c2).sqrt() + eps) + wd * theta);
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace rfid
