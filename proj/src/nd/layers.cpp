#include "cirm/nd/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cirm/error.hpp"
#include "cirm/nd/losses.hpp"

namespace cirm {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::relu: return "relu";
    case LayerKind::softmax: return "softmax";
    case LayerKind::recurrent_cell: return "recurrent-cell";
  }
  return "unknown";
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Vec sigmoid(std::span<const double> z) {
  Vec out(z.size());
  std::transform(z.begin(), z.end(), out.begin(),
                 [](double v) { return sigmoid(v); });
  return out;
}

double logit(double p) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return std::log(p) - std::log1p(-p);
}

double logit_derivative(double p) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  return 1.0 / (p * (1.0 - p));
}

Vec relu(std::span<const double> z) {
  Vec out(z.size());
  std::transform(z.begin(), z.end(), out.begin(),
                 [](double v) { return v > 0.0 ? v : 0.0; });
  return out;
}

Vec log_softmax(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  Vec out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

Vec softmax(std::span<const double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  Vec out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

Vec sigmoid_backward(std::span<const double> y, std::span<const double> dy) {
  Vec dz(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dz[i] = dy[i] * y[i] * (1.0 - y[i]);
  return dz;
}

Vec relu_backward(std::span<const double> z, std::span<const double> dy) {
  Vec dz(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) dz[i] = z[i] > 0.0 ? dy[i] : 0.0;
  return dz;
}

Vec softmax_backward(std::span<const double> y, std::span<const double> dy) {
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * dy[i];
  Vec dz(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) dz[i] = y[i] * (dy[i] - dot);
  return dz;
}

Vec linear_forward(const ParamTensor& weight, const ParamTensor& bias,
                   std::span<const double> x) {
  if (weight.shape.size() != 2 || bias.shape.size() != 1 ||
      weight.shape[0] != bias.shape[0] || weight.shape[1] != x.size()) {
    throw ShapeError("linear: weight " + weight.shape_string() + ", bias " +
                     bias.shape_string() + ", input [" +
                     std::to_string(x.size()) + "]");
  }
  const std::size_t out = weight.shape[0];
  const std::size_t in = weight.shape[1];
  Vec y(bias.values);
  for (std::size_t r = 0; r < out; ++r) {
    const double* row = weight.values.data() + r * in;
    double acc = 0.0;
    for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
    y[r] += acc;
  }
  return y;
}

Linear::Linear(const std::string& name, std::size_t in_dim, std::size_t out_dim)
    : weight(name + ".weight", {out_dim, in_dim}),
      bias(name + ".bias", {out_dim}),
      in_dim_(in_dim),
      out_dim_(out_dim) {
  if (in_dim == 0 || out_dim == 0) {
    throw ValueError("linear layer '" + name + "' needs positive dimensions");
  }
}

Vec Linear::forward(std::span<const double> x) const {
  return linear_forward(weight, bias, x);
}

Vec Linear::backward(std::span<const double> x, std::span<const double> dy) {
  Vec dx(in_dim_, 0.0);
  for (std::size_t r = 0; r < out_dim_; ++r) {
    const double g = dy[r];
    bias.grad[r] += g;
    if (g == 0.0) continue;
    double* grow = weight.grad.data() + r * in_dim_;
    const double* wrow = weight.values.data() + r * in_dim_;
    for (std::size_t c = 0; c < in_dim_; ++c) {
      grow[c] += g * x[c];
      dx[c] += g * wrow[c];
    }
  }
  return dx;
}

void Linear::init(Rng& rng) {
  init_glorot_uniform(weight, in_dim_, out_dim_, rng);
  std::fill(bias.values.begin(), bias.values.end(), 0.0);
}

void Linear::append_parameters(ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

void Linear::append_parameters(ConstParamRefs& out) const {
  out.push_back(&weight);
  out.push_back(&bias);
}

Mlp::Mlp(const std::string& name, std::vector<std::size_t> dims,
         Activation hidden)
    : dims_(std::move(dims)), hidden_(hidden) {
  if (dims_.size() < 2) throw ValueError("mlp '" + name + "' needs >= 2 dims");
  for (std::size_t i = 0; i + 1 < dims_.size(); ++i) {
    layers_.emplace_back(name + "." + std::to_string(i), dims_[i], dims_[i + 1]);
  }
}

std::vector<LayerSpec> Mlp::layer_specs() const {
  std::vector<LayerSpec> specs;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    specs.push_back({LayerKind::linear, layers_[i].in_dim(), layers_[i].out_dim()});
    if (i + 1 < layers_.size() && hidden_ != Activation::identity) {
      specs.push_back({hidden_ == Activation::relu ? LayerKind::relu
                                                   : LayerKind::sigmoid,
                       layers_[i].out_dim(), layers_[i].out_dim()});
    }
  }
  return specs;
}

Vec Mlp::forward(std::span<const double> x, MlpCache* cache) const {
  if (x.size() != in_dim()) {
    throw ShapeError("mlp input [" + std::to_string(x.size()) +
                     "] but expected [" + std::to_string(in_dim()) + "]");
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre_activation.clear();
  }
  Vec h(x.begin(), x.end());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Vec z = layers_[i].forward(h);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre_activation.push_back(z);
    }
    if (i + 1 == layers_.size()) return z;
    switch (hidden_) {
      case Activation::relu: h = relu(z); break;
      case Activation::sigmoid: h = sigmoid(z); break;
      case Activation::identity: h = std::move(z); break;
    }
  }
  return h;
}

Vec Mlp::backward(const MlpCache& cache, std::span<const double> dy) {
  Vec grad(dy.begin(), dy.end());
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (i + 1 < layers_.size()) {
      const Vec& z = cache.pre_activation[i];
      switch (hidden_) {
        case Activation::relu: grad = relu_backward(z, grad); break;
        case Activation::sigmoid: grad = sigmoid_backward(sigmoid(z), grad); break;
        case Activation::identity: break;
      }
    }
    grad = layers_[i].backward(cache.inputs[i], grad);
  }
  return grad;
}

void Mlp::init(Rng& rng) {
  for (Linear& l : layers_) l.init(rng);
}

ParamRefs Mlp::parameters() {
  ParamRefs out;
  for (Linear& l : layers_) l.append_parameters(out);
  return out;
}

ConstParamRefs Mlp::parameters() const {
  ConstParamRefs out;
  for (const Linear& l : layers_) l.append_parameters(out);
  return out;
}

LstmCell::LstmCell(const std::string& name, std::size_t in_dim,
                   std::size_t hidden_dim)
    : weight(name + ".weight", {4 * hidden_dim, in_dim + hidden_dim}),
      bias(name + ".bias", {4 * hidden_dim}),
      in_dim_(in_dim),
      hidden_dim_(hidden_dim) {
  if (in_dim == 0 || hidden_dim == 0) {
    throw ValueError("lstm cell '" + name + "' needs positive dimensions");
  }
}

RecurrentState LstmCell::zero_state() const {
  return {Vec(hidden_dim_, 0.0), Vec(hidden_dim_, 0.0)};
}

RecurrentState LstmCell::step(const RecurrentState& state,
                              std::span<const double> input,
                              LstmCache* cache) const {
  if (input.size() != in_dim_) {
    throw ShapeError("recurrent cell input [" + std::to_string(input.size()) +
                     "] but expected [" + std::to_string(in_dim_) + "]");
  }
  if (state.hidden.size() != hidden_dim_ || state.cell.size() != hidden_dim_) {
    throw ShapeError("recurrent state [" + std::to_string(state.hidden.size()) +
                     "/" + std::to_string(state.cell.size()) +
                     "] but expected [" + std::to_string(hidden_dim_) + "]");
  }
  const std::size_t H = hidden_dim_;
  Vec joined(input.begin(), input.end());
  joined.insert(joined.end(), state.hidden.begin(), state.hidden.end());
  const Vec z = linear_forward(weight, bias, joined);

  RecurrentState next{Vec(H), Vec(H)};
  Vec ig(H), fg(H), gg(H), og(H), tc(H);
  for (std::size_t j = 0; j < H; ++j) {
    ig[j] = sigmoid(z[j]);
    fg[j] = sigmoid(z[H + j]);
    gg[j] = std::tanh(z[2 * H + j]);
    og[j] = sigmoid(z[3 * H + j]);
    next.cell[j] = fg[j] * state.cell[j] + ig[j] * gg[j];
    tc[j] = std::tanh(next.cell[j]);
    next.hidden[j] = og[j] * tc[j];
  }
  if (cache) {
    cache->input = std::move(joined);
    cache->hidden_prev = state.hidden;
    cache->cell_prev = state.cell;
    cache->in_gate = std::move(ig);
    cache->forget_gate = std::move(fg);
    cache->candidate = std::move(gg);
    cache->out_gate = std::move(og);
    cache->cell = next.cell;
    cache->tanh_cell = std::move(tc);
  }
  return next;
}

LstmCell::StepGrads LstmCell::backward(const LstmCache& cache,
                                       std::span<const double> d_hidden,
                                       std::span<const double> d_cell) {
  const std::size_t H = hidden_dim_;
  Vec dz(4 * H);
  StepGrads out;
  out.d_cell_prev.assign(H, 0.0);
  for (std::size_t j = 0; j < H; ++j) {
    const double dc = d_cell[j] + d_hidden[j] * cache.out_gate[j] *
                                      (1.0 - cache.tanh_cell[j] * cache.tanh_cell[j]);
    const double d_out = d_hidden[j] * cache.tanh_cell[j];
    const double d_in = dc * cache.candidate[j];
    const double d_forget = dc * cache.cell_prev[j];
    const double d_cand = dc * cache.in_gate[j];
    out.d_cell_prev[j] = dc * cache.forget_gate[j];
    dz[j] = d_in * cache.in_gate[j] * (1.0 - cache.in_gate[j]);
    dz[H + j] = d_forget * cache.forget_gate[j] * (1.0 - cache.forget_gate[j]);
    dz[2 * H + j] = d_cand * (1.0 - cache.candidate[j] * cache.candidate[j]);
    dz[3 * H + j] = d_out * cache.out_gate[j] * (1.0 - cache.out_gate[j]);
  }
  const std::size_t cols = in_dim_ + H;
  Vec d_joined(cols, 0.0);
  for (std::size_t r = 0; r < 4 * H; ++r) {
    const double g = dz[r];
    bias.grad[r] += g;
    if (g == 0.0) continue;
    double* grow = weight.grad.data() + r * cols;
    const double* wrow = weight.values.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      grow[c] += g * cache.input[c];
      d_joined[c] += g * wrow[c];
    }
  }
  out.d_input.assign(d_joined.begin(), d_joined.begin() + in_dim_);
  out.d_hidden_prev.assign(d_joined.begin() + in_dim_, d_joined.end());
  return out;
}

void LstmCell::init(Rng& rng) {
  init_glorot_uniform(weight, in_dim_ + hidden_dim_, 4 * hidden_dim_, rng);
  std::fill(bias.values.begin(), bias.values.end(), 0.0);
  for (std::size_t j = 0; j < hidden_dim_; ++j) bias.values[hidden_dim_ + j] = 1.0;
}

void LstmCell::append_parameters(ParamRefs& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

void LstmCell::append_parameters(ConstParamRefs& out) const {
  out.push_back(&weight);
  out.push_back(&bias);
}

}  // namespace cirm
