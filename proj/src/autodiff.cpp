#include "fvig/autodiff.hpp"

#include "fvig/errors.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace fvig {

Tape Tape::record(const Tensor& result) {
  Tape tape;
  if (!result.impl()->grad_fn) return tape;

  // Iterative post-order DFS; an entry is emitted after all of its inputs.
  std::unordered_set<const TensorImpl*> visited;
  std::vector<std::pair<ImplPtr, std::size_t>> stack;
  stack.emplace_back(result.impl(), 0);
  visited.insert(result.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto& inputs = impl->grad_fn->inputs;
    if (next < inputs.size()) {
      const ImplPtr child = inputs[next++];
      if (child->grad_fn && visited.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    tape.entries_.push_back({impl, impl->grad_fn});
    stack.pop_back();
  }
  return tape;
}

void backward(const Tensor& loss, const Tape& tape) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  for (const auto& e : tape.entries()) e.output->grad.reset();
  loss.impl()->accumulate_grad(Eigen::ArrayXd::Ones(1));
  for (auto it = tape.entries().rbegin(); it != tape.entries().rend(); ++it) {
    if (!it->output->grad) continue;
    it->node->backward(*it->output->grad, it->node->inputs);
  }
}

void backward(const Tensor& loss) { backward(loss, Tape::record(loss)); }

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < floor) return 0.0;
  return std::abs(analytic - numeric) / scale;
}

namespace {

void note(GradCheckReport& report, std::size_t index, std::string label, double analytic,
          double numeric) {
  const double err = relative_error(analytic, numeric);
  ++report.checked;
  if (report.checked == 1 || err > report.max_rel_error) {
    report.max_rel_error = err;
    report.worst_index = index;
    report.worst_label = std::move(label);
    report.analytic = analytic;
    report.numeric = numeric;
  }
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h, double tol) {
  Tensor input = x.detach();
  input.set_requires_grad(true);
  backward(f(input));
  const Eigen::ArrayXd analytic =
      input.has_grad() ? input.grad() : Eigen::ArrayXd::Zero(input.values().size());

  GradCheckReport report;
  NoGradGuard no_grad;
  for (Eigen::Index i = 0; i < input.values().size(); ++i) {
    const double saved = input.values()[i];
    input.mutable_values()[i] = saved + h;
    const double plus = f(input).item();
    input.mutable_values()[i] = saved - h;
    const double minus = f(input).item();
    input.mutable_values()[i] = saved;
    note(report, static_cast<std::size_t>(i), "x[" + std::to_string(i) + "]", analytic[i],
         (plus - minus) / (2.0 * h));
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

GradCheckReport grad_check_params(const std::function<Tensor()>& loss_fn,
                                  const std::vector<ParamProbe>& probes, double h, double tol) {
  std::vector<Tensor> touched;
  for (const auto& p : probes) {
    Tensor t = p.tensor;
    t.clear_grad();
    touched.push_back(t);
  }
  backward(loss_fn());

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t n = 0; n < probes.size(); ++n) {
    Tensor t = probes[n].tensor;
    const auto i = static_cast<Eigen::Index>(probes[n].index);
    const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
    const double saved = t.values()[i];
    t.mutable_values()[i] = saved + h;
    const double plus = loss_fn().item();
    t.mutable_values()[i] = saved - h;
    const double minus = loss_fn().item();
    t.mutable_values()[i] = saved;
    note(report, n, probes[n].name + "[" + std::to_string(probes[n].index) + "]", analytic,
         (plus - minus) / (2.0 * h));
  }
  report.passed = report.max_rel_error <= tol;
  for (auto& t : touched) t.clear_grad();
  return report;
}

std::vector<ParamProbe> sample_probes(const std::vector<std::pair<std::string, Tensor>>& params,
                                      std::size_t count, std::mt19937_64& rng) {
  std::size_t total = 0;
  for (const auto& [name, t] : params) total += t.numel();
  if (total == 0) return {};
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<ParamProbe> probes;
  for (std::size_t n = 0; n < count; ++n) {
    std::size_t flat = pick(rng);
    for (const auto& [name, t] : params) {
      if (flat < t.numel()) {
        probes.push_back({name, t, flat});
        break;
      }
      flat -= t.numel();
    }
  }
  return probes;
}

}  // namespace fvig
