#pragma once

#include "fvig/tensor.hpp"

#include <cstddef>
#include <vector>

namespace fvig {

struct AdamWHyper {
  double lr = 3.125e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// First/second moment estimates, one pair per parameter, plus the step count.
struct OptimizerState {
  AdamWHyper hyper;
  std::vector<Eigen::ArrayXd> first_moment;
  std::vector<Eigen::ArrayXd> second_moment;
  std::size_t step = 0;

  static OptimizerState for_params(const std::vector<Tensor>& params, AdamWHyper hyper);
};

/// One AdamW update with decoupled weight decay:
///   w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
/// `lr` overrides hyper.lr so a schedule can drive it.
void adamw_step(std::vector<Tensor>& params, const std::vector<Eigen::ArrayXd>& grads,
                OptimizerState& state, double lr);

/// Same, reading each parameter's accumulated gradient (zero when absent).
void adamw_step(std::vector<Tensor>& params, OptimizerState& state, double lr);

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min);

}  // namespace fvig
