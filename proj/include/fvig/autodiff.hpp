#pragma once

#include "fvig/tensor.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace fvig {

/// Recorded operations reachable from a result, in topological order: every
/// entry's inputs were produced by earlier entries or are leaves.
class Tape {
 public:
  struct Entry {
    ImplPtr output;
    std::shared_ptr<Node> node;
  };

  static Tape record(const Tensor& result);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
};

/// Fills dLoss/dT for every tensor on the tape that requires a gradient.
/// Leaf gradients accumulate across calls; intermediate gradients are reset.
/// Throws ShapeError when `loss` is not a single-element tensor.
void backward(const Tensor& loss, const Tape& tape);
void backward(const Tensor& loss);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat index, or position in a parameter sample
  std::string worst_label;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

/// |a - n| / max(|a|, |n|); zero when both magnitudes are below `floor`.
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Compares the backward gradient of scalar f at x against central differences
/// with step h, over every element of x.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h = 1e-6, double tol = 1e-4);

struct ParamProbe {
  std::string name;
  Tensor tensor;
  std::size_t index;
};

/// Same check for a loss closure over a set of already-wired parameters,
/// restricted to the listed (tensor, element) probes.
GradCheckReport grad_check_params(const std::function<Tensor()>& loss_fn,
                                  const std::vector<ParamProbe>& probes, double h = 1e-6,
                                  double tol = 1e-4);

/// Draws `count` (tensor, element) probes uniformly over all elements.
std::vector<ParamProbe> sample_probes(const std::vector<std::pair<std::string, Tensor>>& params,
                                      std::size_t count, std::mt19937_64& rng);

}  // namespace fvig
