#include "fvig/optim.hpp"

#include "fvig/errors.hpp"

#include <cmath>
#include <numbers>

namespace fvig {

OptimizerState OptimizerState::for_params(const std::vector<Tensor>& params, AdamWHyper hyper) {
  OptimizerState state;
  state.hyper = hyper;
  for (const auto& p : params) {
    state.first_moment.push_back(Eigen::ArrayXd::Zero(p.values().size()));
    state.second_moment.push_back(Eigen::ArrayXd::Zero(p.values().size()));
  }
  return state;
}

void adamw_step(std::vector<Tensor>& params, const std::vector<Eigen::ArrayXd>& grads,
                OptimizerState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " +
                     std::to_string(state.first_moment.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].values().size() ||
        state.first_moment[i].size() != params[i].values().size()) {
      throw ShapeError("adamw_step: size mismatch for parameter " + std::to_string(i) + " of shape " +
                       shape_to_string(params[i].shape()));
    }
  }
  const auto& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(h.beta1, t);
  const double bias2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = h.beta1 * m + (1.0 - h.beta1) * grads[i];
    v = h.beta2 * v + (1.0 - h.beta2) * grads[i].square();
    auto& w = params[i].mutable_values();
    w -= lr * ((m / bias1) / ((v / bias2).sqrt() + h.eps) + h.weight_decay * w);
  }
}

void adamw_step(std::vector<Tensor>& params, OptimizerState& state, double lr) {
  std::vector<Eigen::ArrayXd> grads;
  grads.reserve(params.size());
  for (const auto& p : params) {
    grads.push_back(p.has_grad() ? p.grad() : Eigen::ArrayXd::Zero(p.values().size()));
  }
  adamw_step(params, grads, state, lr);
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (step > total_steps) {
    throw RangeError("cosine_lr: step " + std::to_string(step) + " beyond total " +
                     std::to_string(total_steps));
  }
  if (total_steps == 0) return lr_max;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace fvig
