#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evplan/autodiff.hpp"
#include "evplan/tensor.hpp"

namespace evplan {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  AdamWConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  AdamWState() = default;
  AdamWState(const AdamWConfig& cfg, std::span<const Tensor> params);
};

/// One AdamW update with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
/// Every parameter must carry a gradient (see GradientMap).
void adamw_step(std::span<Tensor> params, const GradientMap& grads, AdamWState& state);

/// Same, reading gradients straight from the tensors.
void adamw_step(std::span<Tensor> params, AdamWState& state);

void zero_grads(std::span<Tensor> params);

/// Clips the global L2 norm of the parameter gradients; returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace evplan
