#include "otneg/encoder.hpp"

#include <cmath>

namespace otneg {

namespace {

constexpr double kMinProjectionNorm = 1e-12;

double activate(Nonlinearity act, double z) {
  switch (act) {
    case Nonlinearity::Tanh: return std::tanh(z);
    case Nonlinearity::SmoothReLU: {
      const double kz = kSmoothReluSharpness * z;
      return (std::max(kz, 0.0) + std::log1p(std::exp(-std::abs(kz)))) / kSmoothReluSharpness;
    }
  }
  return z;
}

double activate_derivative(Nonlinearity act, double z, double a) {
  switch (act) {
    case Nonlinearity::Tanh: return 1.0 - a * a;
    case Nonlinearity::SmoothReLU: {
      const double kz = kSmoothReluSharpness * z;
      if (kz >= 0.0) return 1.0 / (1.0 + std::exp(-kz));
      const double e = std::exp(kz);
      return e / (1.0 + e);
    }
  }
  return 1.0;
}

}  // namespace

const char* to_string(Nonlinearity act) {
  switch (act) {
    case Nonlinearity::Tanh: return "tanh";
    case Nonlinearity::SmoothReLU: return "smooth_relu";
  }
  return "unknown";
}

Nonlinearity nonlinearity_from_string(const std::string& name) {
  if (name == "tanh") return Nonlinearity::Tanh;
  if (name == "smooth_relu") return Nonlinearity::SmoothReLU;
  throw Error(ErrorKind::Config, "unknown nonlinearity '" + name + "'");
}

EncoderParams::EncoderParams(std::vector<int> dims, Nonlinearity act)
    : dims_(std::move(dims)), act_(act) {
  require(dims_.size() >= 2, ErrorKind::InvalidArgument, "an encoder needs at least one layer");
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    require(dims_[l] >= 1 && dims_[l + 1] >= 1, ErrorKind::InvalidArgument,
            "layer dims must be positive");
    offsets_.push_back(offset);
    offset += static_cast<std::size_t>(dims_[l + 1]) * (dims_[l] + 1);
  }
  flat_.assign(offset, 0.0);
}

EncoderParams EncoderParams::glorot(std::vector<int> dims, Nonlinearity act,
                                    std::mt19937_64& rng) {
  EncoderParams params(std::move(dims), act);
  for (int l = 0; l < params.num_layers(); ++l) {
    const int fan_in = params.dims_[l];
    const int fan_out = params.dims_[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = params.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
  }
  return params;
}

Eigen::Map<const Matrix> EncoderParams::weight(int layer) const {
  return {flat_.data() + weight_offset(layer), dims_[layer + 1], dims_[layer]};
}
Eigen::Map<Matrix> EncoderParams::weight(int layer) {
  return {flat_.data() + weight_offset(layer), dims_[layer + 1], dims_[layer]};
}
Eigen::Map<const Vector> EncoderParams::bias(int layer) const {
  return {flat_.data() + bias_offset(layer), dims_[layer + 1]};
}
Eigen::Map<Vector> EncoderParams::bias(int layer) {
  return {flat_.data() + bias_offset(layer), dims_[layer + 1]};
}

void EncoderParams::validate() const {
  require(dims_.size() >= 2, ErrorKind::InvalidArgument, "an encoder needs at least one layer");
  for (double x : flat_)
    require(std::isfinite(x), ErrorKind::NumericalOverflow, "encoder parameters are not finite");
}

EmbeddingBatch forward(const EncoderParams& params, const Matrix& inputs, ForwardTape* tape) {
  require(inputs.cols() == params.input_dim(), ErrorKind::DimensionMismatch,
          "input width does not match the encoder");
  require(inputs.allFinite(), ErrorKind::InvalidArgument, "inputs must be finite");
  const int layers = params.num_layers();
  Matrix current = inputs;
  if (tape) {
    tape->activations.clear();
    tape->pre_activations.clear();
    tape->activations.push_back(inputs);
  }
  for (int l = 0; l < layers; ++l) {
    Matrix z = current * params.weight(l).transpose();
    z.rowwise() += params.bias(l).transpose();
    if (l + 1 == layers) {
      if (tape) tape->pre_activations.push_back(z);
      current = std::move(z);
      break;
    }
    Matrix a = z.unaryExpr([&](double x) { return activate(params.activation(), x); });
    if (tape) {
      tape->pre_activations.push_back(std::move(z));
      tape->activations.push_back(a);
    }
    current = std::move(a);
  }

  EmbeddingBatch batch;
  Vector norms = current.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    require(norms(i) >= kMinProjectionNorm, ErrorKind::ZeroVectorProjection,
            "row " + std::to_string(i) + " has no direction to project");
  }
  batch.vectors = norms.cwiseInverse().asDiagonal() * current;
  if (tape) {
    tape->raw_output = std::move(current);
    tape->norms = std::move(norms);
    tape->embeddings = batch.vectors;
  }
  return batch;
}

std::vector<double> backward(const ForwardTape& tape, const EncoderParams& params,
                             const Matrix& d_embeddings) {
  require(d_embeddings.rows() == tape.embeddings.rows() &&
              d_embeddings.cols() == tape.embeddings.cols(),
          ErrorKind::DimensionMismatch, "upstream gradient shape does not match the tape");
  EncoderParams grads(params.dims(), params.activation());

  // Projection Jacobian (I - u u^T) / |g| per row.
  const Vector radial = d_embeddings.cwiseProduct(tape.embeddings).rowwise().sum();
  Matrix delta = d_embeddings - radial.asDiagonal() * tape.embeddings;
  delta = tape.norms.cwiseInverse().asDiagonal() * delta;

  for (int l = params.num_layers() - 1; l >= 0; --l) {
    const Matrix& input = tape.activations[l];
    grads.weight(l) = delta.transpose() * input;
    grads.bias(l) = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix upstream = delta * params.weight(l);
    const Matrix& z = tape.pre_activations[l - 1];
    const Matrix& a = tape.activations[l];
    for (Eigen::Index r = 0; r < upstream.rows(); ++r)
      for (Eigen::Index c = 0; c < upstream.cols(); ++c)
        upstream(r, c) *= activate_derivative(params.activation(), z(r, c), a(r, c));
    delta = std::move(upstream);
  }
  return std::move(grads.flat());
}

AdamState AdamState::zeros(std::size_t size) {
  AdamState state;
  state.m.assign(size, 0.0);
  state.v.assign(size, 0.0);
  return state;
}

void adam_step(EncoderParams& params, const std::vector<double>& grads, AdamState& state,
               const AdamHyper& hyper) {
  require(grads.size() == params.size() && state.m.size() == params.size() &&
              state.v.size() == params.size(),
          ErrorKind::DimensionMismatch, "optimizer shapes do not match the parameters");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  auto& theta = params.flat();
  for (std::size_t k = 0; k < theta.size(); ++k) {
    const double g = grads[k];
    state.m[k] = hyper.beta1 * state.m[k] + (1.0 - hyper.beta1) * g;
    state.v[k] = hyper.beta2 * state.v[k] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = state.m[k] / correction1;
    const double v_hat = state.v[k] / correction2;
    theta[k] -= hyper.lr * (m_hat / (std::sqrt(v_hat) + hyper.eps) + hyper.weight_decay * theta[k]);
  }
}

}  // namespace otneg
