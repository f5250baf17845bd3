#include "fvig/tensor.hpp"

#include "fvig/errors.hpp"

#include <numeric>
#include <sstream>

namespace fvig {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

void TensorImpl::accumulate_grad(const Eigen::ArrayXd& delta) {
  if (!requires_grad) return;
  if (!grad) {
    grad = delta;
  } else {
    *grad += delta;
  }
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, Eigen::ArrayXd values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != static_cast<std::size_t>(values.size())) {
    throw ShapeError("tensor shape " + shape_to_string(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::ones(const Shape& shape, bool requires_grad) {
  return full(shape, 1.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, Eigen::ArrayXd::Constant(static_cast<Eigen::Index>(shape_numel(shape)), value),
                requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::initializer_list<double> values, bool requires_grad) {
  Eigen::ArrayXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return Tensor(shape, std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({}, value, requires_grad);
}

std::size_t Tensor::dim(int axis) const {
  const int r = static_cast<int>(rank());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw RangeError("axis " + std::to_string(axis) + " invalid for shape " +
                     shape_to_string(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(a)];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) {
    throw RangeError("index rank " + std::to_string(index.size()) + " does not match shape " +
                     shape_to_string(shape()));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis]) {
      throw RangeError("index out of range for shape " + shape_to_string(shape()));
    }
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->values[static_cast<Eigen::Index>(flat)];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape_to_string(shape()));
  }
  return impl_->values[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

const Eigen::ArrayXd& Tensor::grad() const {
  if (!impl_->grad) throw std::logic_error("tensor has no gradient");
  return *impl_->grad;
}

void Tensor::zero_grad() {
  impl_->grad = Eigen::ArrayXd::Zero(impl_->values.size());
}

Tensor Tensor::clone() const {
  Tensor out(impl_->shape, impl_->values, impl_->requires_grad);
  if (impl_->grad) out.impl_->grad = impl_->grad;
  return out;
}

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->values, false); }

Tensor random_uniform(const Shape& shape, double low, double high, std::mt19937_64& rng,
                      bool requires_grad) {
  std::uniform_real_distribution<double> dist(low, high);
  Eigen::ArrayXd v(static_cast<Eigen::Index>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

Tensor random_normal(const Shape& shape, double stddev, std::mt19937_64& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::ArrayXd v(static_cast<Eigen::Index>(shape_numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(std::string name, Shape shape, Eigen::ArrayXd values,
                   std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;

  auto node = std::make_shared<Node>();
  node->name = std::move(name);
  node->inputs.reserve(inputs.size());
  for (auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
  return out;
}

}  // namespace fvig
