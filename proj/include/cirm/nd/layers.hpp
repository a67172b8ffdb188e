#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cirm/nd/tensor.hpp"

namespace cirm {

enum class LayerKind { linear, sigmoid, relu, softmax, recurrent_cell };

const char* to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::linear;
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
};

/// Numerically stable logistic function; saturates to exactly 0 or 1.
double sigmoid(double z);
Vec sigmoid(std::span<const double> z);
/// Inverse of sigmoid with the probability clamped away from {0, 1}.
double logit(double p);
/// d logit / dp; zero where the clamp is active.
double logit_derivative(double p);
Vec relu(std::span<const double> z);
Vec softmax(std::span<const double> z);
Vec log_softmax(std::span<const double> z);

/// Vector-Jacobian products for the elementwise/softmax activations, given
/// the activation *output* y and the upstream gradient dy.
Vec sigmoid_backward(std::span<const double> y, std::span<const double> dy);
Vec relu_backward(std::span<const double> z, std::span<const double> dy);
Vec softmax_backward(std::span<const double> y, std::span<const double> dy);

/// W x + b with W stored row-major as [out x in]. Throws ShapeError naming
/// both shapes on mismatch.
Vec linear_forward(const ParamTensor& weight, const ParamTensor& bias,
                   std::span<const double> x);

class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in_dim, std::size_t out_dim);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }

  Vec forward(std::span<const double> x) const;
  /// Accumulates dW and db for input x; returns dx.
  Vec backward(std::span<const double> x, std::span<const double> dy);

  void init(Rng& rng);
  void append_parameters(ParamRefs& out);
  void append_parameters(ConstParamRefs& out) const;

  ParamTensor weight;
  ParamTensor bias;

 private:
  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
};

enum class Activation { identity, relu, sigmoid };

struct MlpCache {
  std::vector<Vec> inputs;       // input to each linear layer
  std::vector<Vec> pre_activation;
};

/// Stack of linear layers with a shared hidden activation and a linear
/// (logit) output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, std::vector<std::size_t> dims,
      Activation hidden = Activation::relu);

  std::size_t in_dim() const { return dims_.front(); }
  std::size_t out_dim() const { return dims_.back(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::vector<LayerSpec> layer_specs() const;

  Vec forward(std::span<const double> x, MlpCache* cache = nullptr) const;
  Vec backward(const MlpCache& cache, std::span<const double> dy);

  void init(Rng& rng);
  ParamRefs parameters();
  ConstParamRefs parameters() const;

  std::vector<Linear>& layers() { return layers_; }

 private:
  std::vector<std::size_t> dims_;
  Activation hidden_ = Activation::relu;
  std::vector<Linear> layers_;
};

struct RecurrentState {
  Vec hidden;
  Vec cell;
};

struct LstmCache {
  Vec input;
  Vec hidden_prev;
  Vec cell_prev;
  Vec in_gate, forget_gate, candidate, out_gate;
  Vec cell;
  Vec tanh_cell;
};

/// Four-gate LSTM cell. Gate rows in the fused weight are ordered
/// input, forget, candidate, output.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(const std::string& name, std::size_t in_dim, std::size_t hidden_dim);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t hidden_dim() const { return hidden_dim_; }

  RecurrentState zero_state() const;
  /// One step; the output is the new hidden vector.
  RecurrentState step(const RecurrentState& state, std::span<const double> input,
                      LstmCache* cache = nullptr) const;

  struct StepGrads {
    Vec d_input;
    Vec d_hidden_prev;
    Vec d_cell_prev;
  };
  StepGrads backward(const LstmCache& cache, std::span<const double> d_hidden,
                     std::span<const double> d_cell);

  /// Glorot weights, zero biases except the forget gate bias (1.0).
  void init(Rng& rng);
  void append_parameters(ParamRefs& out);
  void append_parameters(ConstParamRefs& out) const;

  ParamTensor weight;  // [4H x (in + H)]
  ParamTensor bias;    // [4H]

 private:
  std::size_t in_dim_ = 0;
  std::size_t hidden_dim_ = 0;
};

}  // namespace cirm
