#ifndef OTNEG_ENCODER_HPP_
#define OTNEG_ENCODER_HPP_

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "otneg/common.hpp"
#include "otneg/negative_sampler.hpp"

namespace otneg {

enum class Nonlinearity { Tanh, SmoothReLU };

const char* to_string(Nonlinearity act);
Nonlinearity nonlinearity_from_string(const std::string& name);

// Sharpness of the softplus used as SmoothReLU.
constexpr double kSmoothReluSharpness = 10.0;

// Multilayer perceptron followed by projection onto the unit sphere.
// dims = {D, h_1, ..., h_k, d}; the nonlinearity is applied after every layer
// except the last. All weights and biases live in one flat buffer, layer by
// layer, each layer as row-major W (out x in) followed by b (out).
class EncoderParams {
 public:
  EncoderParams() = default;
  EncoderParams(std::vector<int> dims, Nonlinearity act);

  static EncoderParams glorot(std::vector<int> dims, Nonlinearity act, std::mt19937_64& rng);

  int num_layers() const { return static_cast<int>(dims_.size()) - 1; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  const std::vector<int>& dims() const { return dims_; }
  Nonlinearity activation() const { return act_; }

  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<const Vector> bias(int layer) const;
  Eigen::Map<Vector> bias(int layer);

  std::vector<double>& flat() { return flat_; }
  const std::vector<double>& flat() const { return flat_; }
  std::size_t size() const { return flat_.size(); }

  void validate() const;

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;

 private:
  std::size_t weight_offset(int layer) const { return offsets_[layer]; }
  std::size_t bias_offset(int layer) const {
    return offsets_[layer] + static_cast<std::size_t>(dims_[layer + 1]) * dims_[layer];
  }

  std::vector<int> dims_;
  Nonlinearity act_ = Nonlinearity::Tanh;
  std::vector<std::size_t> offsets_;
  std::vector<double> flat_;
};

struct ForwardTape {
  std::vector<Matrix> activations;      // activations[0] = inputs
  std::vector<Matrix> pre_activations;  // one per layer
  Matrix raw_output;                    // before normalization
  Vector norms;                         // row norms of raw_output
  Matrix embeddings;                    // unit rows
};

// Throws ZeroVectorProjection if a row's pre-normalization norm is < 1e-12.
EmbeddingBatch forward(const EncoderParams& params, const Matrix& inputs, ForwardTape* tape);

// Gradient of the loss w.r.t. the flat parameter buffer, given the gradient
// w.r.t. the unit-norm embeddings.
std::vector<double> backward(const ForwardTape& tape, const EncoderParams& params,
                             const Matrix& d_embeddings);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  static AdamState zeros(std::size_t size);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Adam with decoupled weight decay:
//   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
void adam_step(EncoderParams& params, const std::vector<double>& grads, AdamState& state,
               const AdamHyper& hyper);

}  // namespace otneg

#endif  // OTNEG_ENCODER_HPP_
