#include "rfid/parameters.hpp"

#include <algorithm>
#include <random>

#include "rfid/errors.hpp"
#include "rfid/random.hpp"

namespace rfid {

namespace {

class LayoutBuilder {
 public:
  explicit LayoutBuilder(std::vector<TensorSpec>& specs) : specs_(specs) {}

  int tensor(const std::string& name, int rows, int cols) {
    specs_.push_back({name, rows, cols});
    return static_cast<int>(specs_.size()) - 1;
  }
  LinearSlots linear(const std::string& prefix, int in, int out) {
    return {tensor(prefix + ".weight", in, out), tensor(prefix + ".bias", 1, out)};
  }
  NormSlots norm(const std::string& prefix, int width) {
    return {tensor(prefix + ".gain", 1, width), tensor(prefix + ".bias", 1, width)};
  }
  AttentionSlots attention(const std::string& prefix, int width) {
    return {linear(prefix + ".query", width, width), linear(prefix + ".key", width, width),
            linear(prefix + ".value", width, width), linear(prefix + ".output", width, width)};
  }
  FeedForwardSlots ffn(const std::string& prefix, int width, int inner) {
    return {linear(prefix + ".in", width, inner), linear(prefix + ".out", inner, width)};
  }

 private:
  std::vector<TensorSpec>& specs_;
};

}  // namespace

ParameterLayout::ParameterLayout(const ModelConfig& cfg) {
  cfg.validate();
  LayoutBuilder b(specs);
  const int d = cfg.hidden;
  const int f = cfg.ffn();
  encoder_embedding = b.tensor("encoder.embedding", cfg.vocab_size, d);
  for (int i = 0; i < cfg.enc_layers; ++i) {
    const std::string p = "encoder.layer" + std::to_string(i);
    EncoderLayerSlots s;
    s.norm1 = b.norm(p + ".norm1", d);
    s.self_attention = b.attention(p + ".self_attention", d);
    s.norm2 = b.norm(p + ".norm2", d);
    s.ffn = b.ffn(p + ".ffn", d, f);
    encoder_layers.push_back(s);
  }
  encoder_norm = b.norm("encoder.final_norm", d);
  decoder_embedding = b.tensor("decoder.embedding", cfg.vocab_size, d);
  for (int i = 0; i < cfg.dec_layers; ++i) {
    const std::string p = "decoder.layer" + std::to_string(i);
    DecoderLayerSlots s;
    s.norm1 = b.norm(p + ".norm1", d);
    s.self_attention = b.attention(p + ".self_attention", d);
    s.norm2 = b.norm(p + ".norm2", d);
    s.cross_attention = b.attention(p + ".cross_attention", d);
    s.norm3 = b.norm(p + ".norm3", d);
    s.ffn = b.ffn(p + ".ffn", d, f);
    decoder_layers.push_back(s);
  }
  decoder_norm = b.norm("decoder.final_norm", d);
  lm_head = b.linear("lm_head", d, cfg.vocab_size);
  classifier_weight = b.tensor("classifier.weight", 2, d);
  classifier_bias = b.tensor("classifier.bias", 1, 2);
  rationale_embedding = b.tensor("rationale_embedding", 2, d);
}

int ParameterLayout::find(const std::string& name) const {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

bool is_classifier_tensor(const std::string& name) { return name.rfind("classifier.", 0) == 0; }
bool is_rationale_embedding_tensor(const std::string& name) {
  return name == "rationale_embedding";
}

template <class Scalar>
Parameters<Scalar>::Parameters(const ModelConfig& cfg) : config_(cfg), layout_(cfg) {
  for (const auto& spec : layout_.specs) {
    tensors_.push_back(Matrix<Scalar>::Zero(spec.rows, spec.cols));
  }
}

template <class Scalar>
Matrix<Scalar>& Parameters<Scalar>::at(const std::string& name) {
  const int i = layout_.find(name);
  require(i >= 0, "no parameter named " + name);
  return tensors_[static_cast<std::size_t>(i)];
}

template <class Scalar>
const Matrix<Scalar>& Parameters<Scalar>::at(const std::string& name) const {
  const int i = layout_.find(name);
  require(i >= 0, "no parameter named " + name);
  return tensors_[static_cast<std::size_t>(i)];
}

template <class Scalar>
std::size_t Parameters<Scalar>::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

template <class Scalar>
void Parameters<Scalar>::set_zero() {
  for (auto& t : tensors_) t.setZero();
}

template <class Scalar>
bool Parameters<Scalar>::all_finite() const {
  return std::all_of(tensors_.begin(), tensors_.end(),
                     [](const Matrix<Scalar>& t) { return t.allFinite(); });
}

template <class Scalar>
Parameters<Scalar> Parameters<Scalar>::zeros_like() const {
  return Parameters(config_);
}

template <class Scalar>
Parameters<Scalar> initialize_parameters(const ModelConfig& cfg) {
  Parameters<Scalar> params(cfg);
  auto rng = make_rng(cfg.seed, "init");
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill_normal = [&](Matrix<Scalar>& t, double stddev) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      t.data()[i] = static_cast<Scalar>(stddev * normal(rng));
    }
  };
  const auto& layout = params.layout();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& spec = layout.specs[i];
    const std::string& name = spec.name;
    auto ends_with = [&](const char* suffix) {
      const std::string s(suffix);
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".gain")) {
      params[i].setOnes();
    } else if (ends_with(".bias")) {
      params[i].setZero();
    } else if (name == "encoder.embedding" || name == "decoder.embedding" ||
               name == "rationale_embedding") {
      fill_normal(params[i], 1.0);
    } else if (name == "classifier.weight") {
      fill_normal(params[i], 1.0 / std::sqrt(static_cast<double>(spec.cols)));
    } else {
      fill_normal(params[i], 1.0 / std::sqrt(static_cast<double>(spec.rows)));
    }
  }
  return params;
}

template class Parameters<float>;
template class Parameters<double>;
template Parameters<float> initialize_parameters<float>(const ModelConfig&);
template Parameters<double> initialize_parameters<double>(const ModelConfig&);

}  // namespace rfid
