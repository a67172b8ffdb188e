#include "cirm/nd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cirm/error.hpp"
#include "cirm/nd/layers.hpp"

namespace cirm {

double clamp_floor_loss() { return -std::log1p(-kProbClamp); }

namespace {

void check_bce_args(std::span<const double> p, std::span<const double> t,
                    std::span<const double> w) {
  if (p.size() != t.size() || (!w.empty() && w.size() != p.size())) {
    throw ShapeError("bce: predictions [" + std::to_string(p.size()) +
                     "], targets [" + std::to_string(t.size()) + "], weights [" +
                     std::to_string(w.size()) + "]");
  }
  if (p.empty()) throw ShapeError("bce: empty input");
}

}  // namespace

double bce_loss(std::span<const double> p, std::span<const double> t,
                std::span<const double> w) {
  check_bce_args(p, t, w);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbClamp, 1.0 - kProbClamp);
    const double wi = w.empty() ? 1.0 : w[i];
    sum += -wi * (t[i] * std::log(q) + (1.0 - t[i]) * std::log1p(-q));
  }
  return sum / static_cast<double>(p.size());
}

LossGrad bce_loss_grad(std::span<const double> p, std::span<const double> t,
                       std::span<const double> w) {
  LossGrad out;
  out.value = bce_loss(p, t, w);
  out.grad.assign(p.size(), 0.0);
  const double n = static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;  // clamp is flat
    const double wi = w.empty() ? 1.0 : w[i];
    out.grad[i] = -wi * (t[i] / p[i] - (1.0 - t[i]) / (1.0 - p[i])) / n;
  }
  return out;
}

double ce_loss(std::span<const double> logits, std::size_t y) {
  if (y >= logits.size()) {
    throw ValueError("ce: class index " + std::to_string(y) + " out of range [0, " +
                     std::to_string(logits.size()) + ")");
  }
  return -log_softmax(logits)[y];
}

LossGrad ce_loss_grad(std::span<const double> logits, std::size_t y) {
  LossGrad out;
  out.value = ce_loss(logits, y);
  out.grad = softmax(logits);
  out.grad[y] -= 1.0;
  return out;
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace cirm
