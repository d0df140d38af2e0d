#include "mdnet/adam.hpp"

#include <cmath>

namespace mdnet::nn {

AdamState::AdamState(const std::vector<Tensor>& params, AdamOptions opts) : options(opts) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const auto& p : params) {
    first_moment.emplace_back(p.numel(), 0.0);
    second_moment.emplace_back(p.numel(), 0.0);
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
  if (params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: parameter list does not match optimizer state");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");

  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(o.beta1, t);
  const double bias2 = 1.0 - std::pow(o.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != p.numel()) {
      throw ShapeError("adam_step: moment size mismatch for parameter " + std::to_string(k));
    }
    auto values = p.mutable_values();
    const auto grad = p.grad();
    const bool has_grad = !grad.empty();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? grad[i] : 0.0;
      if (o.weight_decay != 0.0) values[i] -= lr * o.weight_decay * values[i];
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      values[i] -= lr * mhat / (std::sqrt(vhat) + o.epsilon);
    }
  }
}

}  // namespace mdnet::nn
