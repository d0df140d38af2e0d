#pragma once

#include <cstdint>
#include <vector>

#include "mdnet/tensor.hpp"

namespace mdnet::nn {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled: p <- p - lr * weight_decay * p
};

/// Moment estimates for a fixed list of parameters, in the order given to the
/// constructor. The same order must be used for every adam_step call.
struct AdamState {
  AdamOptions options;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  AdamState() = default;
  AdamState(const std::vector<Tensor>& params, AdamOptions opts);
};

/// One bias-corrected Adam update using each parameter's accumulated grad
/// (a parameter without a grad is treated as having a zero gradient).
void adam_step(std::vector<Tensor>& params, AdamState& state, double lr);

}  // namespace mdnet::nn
