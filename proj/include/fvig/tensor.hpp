#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace fvig {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct Node;

/// Storage shared by every handle to the same tensor.
struct TensorImpl {
  Shape shape;
  Eigen::ArrayXd values;
  std::optional<Eigen::ArrayXd> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;  // null for leaves

  void accumulate_grad(const Eigen::ArrayXd& delta);
};

using ImplPtr = std::shared_ptr<TensorImpl>;

/// Backward rule of one recorded operation. `grad_out` is dLoss/dOutput;
/// the rule accumulates into the grads of whichever inputs require them.
using BackwardFn =
    std::function<void(const Eigen::ArrayXd& grad_out, std::span<const ImplPtr> inputs)>;

struct Node {
  std::string name;
  std::vector<ImplPtr> inputs;
  BackwardFn backward;
};

/// Dense row-major tensor of doubles with optional reverse-mode gradient.
///
/// Copies are shallow handles onto the same storage, so a parameter held in a
/// model and the handle passed to an op refer to the same values and grad.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, Eigen::ArrayXd values, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor ones(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::initializer_list<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(int axis) const;
  std::size_t numel() const { return static_cast<std::size_t>(impl_->values.size()); }

  const Eigen::ArrayXd& values() const { return impl_->values; }
  /// Direct write access for initialisation and optimiser updates. Not recorded.
  Eigen::ArrayXd& mutable_values() { return impl_->values; }
  double operator[](std::size_t flat) const { return impl_->values[static_cast<Eigen::Index>(flat)]; }
  double at(std::initializer_list<std::size_t> index) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  bool has_grad() const { return impl_->grad.has_value(); }
  const Eigen::ArrayXd& grad() const;
  /// Sets the gradient to zeros, allocating it when absent.
  void zero_grad();
  void clear_grad() { impl_->grad.reset(); }

  /// New leaf sharing no storage with this tensor.
  Tensor clone() const;
  /// New leaf with the same values and no gradient history.
  Tensor detach() const;

  const ImplPtr& impl() const { return impl_; }
  explicit Tensor(ImplPtr impl) : impl_(std::move(impl)) {}

 private:
  ImplPtr impl_;
};

/// Leaf with values drawn uniformly from [low, high).
Tensor random_uniform(const Shape& shape, double low, double high, std::mt19937_64& rng,
                      bool requires_grad = false);
/// Leaf with standard-normal values times `stddev`.
Tensor random_normal(const Shape& shape, double stddev, std::mt19937_64& rng,
                     bool requires_grad = false);

/// While alive on a thread, operations on that thread record no backward nodes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds the result of an operation and, when any input requires a gradient
/// and recording is enabled, attaches a backward node. This is the single
/// extension point for custom operations.
Tensor make_result(std::string name, Shape shape, Eigen::ArrayXd values,
                   std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace fvig
