#pragma once

#include <cstddef>
#include <span>

#include "cirm/nd/tensor.hpp"

namespace cirm {

/// Probabilities entering a log are clamped to [kProbClamp, 1 - kProbClamp].
inline constexpr double kProbClamp = 1e-7;

/// Per-concept bce of an exact {0,1} match after clamping: -ln(1 - 1e-7).
double clamp_floor_loss();

struct LossGrad {
  double value = 0.0;
  Vec grad;  // d value / d input
};

/// Mean over entries of -w_i [t_i ln p_i + (1 - t_i) ln(1 - p_i)].
/// An empty weight span means all ones.
double bce_loss(std::span<const double> p, std::span<const double> t,
                std::span<const double> w = {});
LossGrad bce_loss_grad(std::span<const double> p, std::span<const double> t,
                       std::span<const double> w = {});

/// -log softmax(logits)[y].
double ce_loss(std::span<const double> logits, std::size_t y);
LossGrad ce_loss_grad(std::span<const double> logits, std::size_t y);

std::size_t argmax(std::span<const double> v);

}  // namespace cirm
