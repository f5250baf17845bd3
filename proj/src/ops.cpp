#include "fvig/ops.hpp"

#include "fvig/errors.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace fvig {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

struct BroadcastPlan {
  Shape out;
  bool identity = false;  // both inputs already have the output shape
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": incompatible shapes " + shape_to_string(a) + " and " +
                       shape_to_string(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Flat source index for every flat position of `out`.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t pad = rank - in.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > pad;) {
    const std::size_t d = in[i - pad];
    stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    index[flat] = offset;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      offset += stride[ax];
      if (counter[ax] < out[ax]) break;
      offset -= stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return index;
}

std::shared_ptr<const BroadcastPlan> plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  auto plan = std::make_shared<BroadcastPlan>();
  plan->out = broadcast_shape(a, b, op);
  plan->identity = a == plan->out && b == plan->out;
  if (!plan->identity) {
    plan->a_index = broadcast_index(a, plan->out);
    plan->b_index = broadcast_index(b, plan->out);
  }
  return plan;
}

// Elementwise binary op. `da`/`db` return the local partial derivatives.
template <class F, class DA, class DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  const auto& av = a.values();
  const auto& bv = b.values();
  const std::size_t n = shape_numel(plan->out);
  Eigen::ArrayXd out(static_cast<Eigen::Index>(n));
  if (plan->identity) {
    for (std::size_t k = 0; k < n; ++k) out[k] = f(av[k], bv[k]);
  } else {
    for (std::size_t k = 0; k < n; ++k) out[k] = f(av[plan->a_index[k]], bv[plan->b_index[k]]);
  }
  return make_result(
      name, plan->out, std::move(out), {a, b},
      [plan, da, db, n](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
        const auto& x = in[0]->values;
        const auto& y = in[1]->values;
        if (in[0]->requires_grad) {
          Eigen::ArrayXd ga = Eigen::ArrayXd::Zero(x.size());
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = plan->identity ? k : plan->a_index[k];
            const std::size_t j = plan->identity ? k : plan->b_index[k];
            ga[i] += g[k] * da(x[i], y[j]);
          }
          in[0]->accumulate_grad(ga);
        }
        if (in[1]->requires_grad) {
          Eigen::ArrayXd gb = Eigen::ArrayXd::Zero(y.size());
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t i = plan->identity ? k : plan->a_index[k];
            const std::size_t j = plan->identity ? k : plan->b_index[k];
            gb[j] += g[k] * db(x[i], y[j]);
          }
          in[1]->accumulate_grad(gb);
        }
      });
}

template <class F, class DF>
Tensor unary_op(const char* name, const Tensor& x, F f, DF df) {
  Eigen::ArrayXd out = x.values().unaryExpr(f);
  return make_result(name, x.shape(), std::move(out), {x},
                     [df](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       in[0]->accumulate_grad(g * in[0]->values.unaryExpr(df));
                     });
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw RangeError("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(x.shape()));
  }
}

void check_adjacency(const Tensor& x, const AdjacencyIndex& adj, const char* op) {
  if (adj.batch != x.dim(0) || adj.nodes != x.dim(1)) {
    throw ShapeError(std::string(op) + ": adjacency [" + std::to_string(adj.batch) + ", " +
                     std::to_string(adj.nodes) + ", " + std::to_string(adj.k) +
                     "] does not match features " + shape_to_string(x.shape()));
  }
  for (auto idx : adj.index) {
    if (idx >= adj.nodes) {
      throw RangeError(std::string(op) + ": neighbour index " + std::to_string(idx) +
                       " out of range for " + std::to_string(adj.nodes) + " nodes");
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2)) {
    throw ShapeError("matmul: shape mismatch " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t p = b.dim(-1);

  if (b.rank() == 2) {
    // Every leading axis of `a` folds into the row count: one GEMM.
    const std::size_t rows = a.numel() / k;
    Shape out_shape = a.shape();
    out_shape.back() = p;
    Eigen::ArrayXd out(static_cast<Eigen::Index>(rows * p));
    MatMap(out.data(), rows, p).noalias() =
        ConstMatMap(a.values().data(), rows, k) * ConstMatMap(b.values().data(), k, p);
    return make_result("matmul", out_shape, std::move(out), {a, b},
                       [rows, k, p](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                         ConstMatMap gm(g.data(), rows, p);
                         if (in[0]->requires_grad) {
                           Eigen::ArrayXd ga(static_cast<Eigen::Index>(rows * k));
                           MatMap(ga.data(), rows, k).noalias() =
                               gm * ConstMatMap(in[1]->values.data(), k, p).transpose();
                           in[0]->accumulate_grad(ga);
                         }
                         if (in[1]->requires_grad) {
                           Eigen::ArrayXd gb(static_cast<Eigen::Index>(k * p));
                           MatMap(gb.data(), k, p).noalias() =
                               ConstMatMap(in[0]->values.data(), rows, k).transpose() * gm;
                           in[1]->accumulate_grad(gb);
                         }
                       });
  }

  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  auto plan = plan_broadcast(a_batch, b_batch, "matmul");
  const std::size_t batches = shape_numel(plan->out);
  Shape out_shape = plan->out;
  out_shape.push_back(m);
  out_shape.push_back(p);
  Eigen::ArrayXd out(static_cast<Eigen::Index>(batches * m * p));
  for (std::size_t t = 0; t < batches; ++t) {
    const std::size_t ia = plan->identity ? t : plan->a_index[t];
    const std::size_t ib = plan->identity ? t : plan->b_index[t];
    MatMap(out.data() + t * m * p, m, p).noalias() =
        ConstMatMap(a.values().data() + ia * m * k, m, k) *
        ConstMatMap(b.values().data() + ib * k * p, k, p);
  }
  return make_result(
      "matmul", out_shape, std::move(out), {a, b},
      [plan, batches, m, k, p](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
        const auto& av = in[0]->values;
        const auto& bv = in[1]->values;
        Eigen::ArrayXd ga, gb;
        if (in[0]->requires_grad) ga = Eigen::ArrayXd::Zero(av.size());
        if (in[1]->requires_grad) gb = Eigen::ArrayXd::Zero(bv.size());
        for (std::size_t t = 0; t < batches; ++t) {
          const std::size_t ia = plan->identity ? t : plan->a_index[t];
          const std::size_t ib = plan->identity ? t : plan->b_index[t];
          ConstMatMap gm(g.data() + t * m * p, m, p);
          if (ga.size()) {
            MatMap(ga.data() + ia * m * k, m, k).noalias() +=
                gm * ConstMatMap(bv.data() + ib * k * p, k, p).transpose();
          }
          if (gb.size()) {
            MatMap(gb.data() + ib * k * p, k, p).noalias() +=
                ConstMatMap(av.data() + ia * m * k, m, k).transpose() * gm;
          }
        }
        if (ga.size()) in[0]->accumulate_grad(ga);
        if (gb.size()) in[1]->accumulate_grad(gb);
      });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2: rank < 2 for " + shape_to_string(x.shape()));
  const std::size_t r = x.dim(-2);
  const std::size_t c = x.dim(-1);
  const std::size_t batches = x.numel() / (r * c);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Eigen::ArrayXd out(x.values().size());
  for (std::size_t t = 0; t < batches; ++t) {
    MatMap(out.data() + t * r * c, c, r) = ConstMatMap(x.values().data() + t * r * c, r, c).transpose();
  }
  return make_result("transpose_last2", shape, std::move(out), {x},
                     [batches, r, c](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       Eigen::ArrayXd gx(g.size());
                       for (std::size_t t = 0; t < batches; ++t) {
                         MatMap(gx.data() + t * r * c, r, c) =
                             ConstMatMap(g.data() + t * r * c, c, r).transpose();
                       }
                       in[0]->accumulate_grad(gx);
                     });
}

Tensor broadcast_add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "broadcast_add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor broadcast_sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "broadcast_sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor broadcast_mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "broadcast_mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor broadcast_div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "broadcast_div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& x, double factor) {
  return make_result("scale", x.shape(), x.values() * factor, {x},
                     [factor](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       in[0]->accumulate_grad(g * factor);
                     });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return make_result("add_scalar", x.shape(), x.values() + offset, {x},
                     [](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       in[0]->accumulate_grad(g);
                     });
}

Tensor activation(const Tensor& x, Activation kind) {
  switch (kind.kind) {
    case ActivationKind::LeakyRelu: {
      const double s = kind.slope;
      return unary_op(
          "leaky_relu", x, [s](double v) { return v >= 0.0 ? v : s * v; },
          [s](double v) { return v >= 0.0 ? 1.0 : s; });
    }
    case ActivationKind::Sigmoid:
      return unary_op(
          "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
          [](double v) {
            const double y = 1.0 / (1.0 + std::exp(-v));
            return y * (1.0 - y);
          });
    case ActivationKind::Gelu: {
      constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
      constexpr double a = 0.044715;
      return unary_op(
          "gelu", x,
          [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v))); },
          [](double v) {
            const double t = std::tanh(c * (v + a * v * v * v));
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * a * v * v);
          });
    }
  }
  throw std::logic_error("unknown activation");
}

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0 || x.dim(-1) == 0) {
    throw ShapeError("softmax_lastdim: empty last axis in " + shape_to_string(x.shape()));
  }
  const std::size_t len = x.dim(-1);
  const std::size_t rows = x.numel() / len;
  Eigen::ArrayXd out(x.values().size());
  for (std::size_t r = 0; r < rows; ++r) {
    auto in_row = x.values().segment(r * len, len);
    auto out_row = out.segment(r * len, len);
    out_row = (in_row - in_row.maxCoeff()).exp();
    out_row /= out_row.sum();
  }
  Eigen::ArrayXd y = out;
  return make_result("softmax_lastdim", x.shape(), std::move(out), {x},
                     [y = std::move(y), rows, len](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       Eigen::ArrayXd gx(g.size());
                       for (std::size_t r = 0; r < rows; ++r) {
                         auto yr = y.segment(r * len, len);
                         auto gr = g.segment(r * len, len);
                         gx.segment(r * len, len) = yr * (gr - (gr * yr).sum());
                       }
                       in[0]->accumulate_grad(gx);
                     });
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
  if (a.rank() == 0 || b.rank() == 0 || a.dim(-1) != b.dim(-1)) {
    throw ShapeError("cosine_similarity: trailing dims differ " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
  if (!(eps > 0.0)) throw RangeError("cosine_similarity: eps must be positive");
  const std::size_t d = a.dim(-1);
  const Shape a_lead(a.shape().begin(), a.shape().end() - 1);
  const Shape b_lead(b.shape().begin(), b.shape().end() - 1);
  auto plan = plan_broadcast(a_lead, b_lead, "cosine_similarity");
  const std::size_t n = shape_numel(plan->out);
  Eigen::ArrayXd out(static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t ia = plan->identity ? t : plan->a_index[t];
    const std::size_t ib = plan->identity ? t : plan->b_index[t];
    auto av = a.values().segment(ia * d, d);
    auto bv = b.values().segment(ib * d, d);
    const double na = std::sqrt(av.square().sum());
    const double nb = std::sqrt(bv.square().sum());
    out[t] = (av * bv).sum() / (std::max(na, eps) * std::max(nb, eps));
  }
  return make_result(
      "cosine_similarity", plan->out, std::move(out), {a, b},
      [plan, n, d, eps](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
        Eigen::ArrayXd ga, gb;
        if (in[0]->requires_grad) ga = Eigen::ArrayXd::Zero(in[0]->values.size());
        if (in[1]->requires_grad) gb = Eigen::ArrayXd::Zero(in[1]->values.size());
        for (std::size_t t = 0; t < n; ++t) {
          const std::size_t ia = plan->identity ? t : plan->a_index[t];
          const std::size_t ib = plan->identity ? t : plan->b_index[t];
          auto av = in[0]->values.segment(ia * d, d);
          auto bv = in[1]->values.segment(ib * d, d);
          const double na = std::sqrt(av.square().sum());
          const double nb = std::sqrt(bv.square().sum());
          const double ma = std::max(na, eps);
          const double mb = std::max(nb, eps);
          const double cos = (av * bv).sum() / (ma * mb);
          if (ga.size()) {
            Eigen::ArrayXd local = bv / (ma * mb);
            if (na > eps) local -= cos * av / (na * ma);
            ga.segment(ia * d, d) += g[t] * local;
          }
          if (gb.size()) {
            Eigen::ArrayXd local = av / (ma * mb);
            if (nb > eps) local -= cos * bv / (nb * mb);
            gb.segment(ib * d, d) += g[t] * local;
          }
        }
        if (ga.size()) in[0]->accumulate_grad(ga);
        if (gb.size()) in[1]->accumulate_grad(gb);
      });
}

Tensor reduce(const Tensor& x, int axis, Reduction kind) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  if (len == 0) throw ShapeError("reduce: empty axis in " + shape_to_string(s));
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != ax) out_shape.push_back(s[i]);
  }
  const auto& v = x.values();
  Eigen::ArrayXd out(static_cast<Eigen::Index>(outer * inner));
  std::vector<std::size_t> argmax;
  if (kind == Reduction::Max) argmax.resize(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      if (kind == Reduction::Max) {
        std::size_t best = 0;
        for (std::size_t l = 1; l < len; ++l) {
          if (v[base + l * inner] > v[base + best * inner]) best = l;
        }
        argmax[o * inner + i] = best;
        out[o * inner + i] = v[base + best * inner];
      } else {
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += v[base + l * inner];
        out[o * inner + i] = kind == Reduction::Mean ? acc / static_cast<double>(len) : acc;
      }
    }
  }
  const char* name = kind == Reduction::Max ? "reduce_max" : kind == Reduction::Mean ? "reduce_mean" : "reduce_sum";
  return make_result(name, out_shape, std::move(out), {x},
                     [kind, outer, inner, len, argmax = std::move(argmax)](
                         const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(in[0]->values.size());
                       const double w = kind == Reduction::Mean ? 1.0 / static_cast<double>(len) : 1.0;
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t i = 0; i < inner; ++i) {
                           const std::size_t base = o * len * inner + i;
                           const double go = g[o * inner + i];
                           if (kind == Reduction::Max) {
                             gx[base + argmax[o * inner + i] * inner] += go;
                           } else {
                             for (std::size_t l = 0; l < len; ++l) gx[base + l * inner] += w * go;
                           }
                         }
                       }
                       in[0]->accumulate_grad(gx);
                     });
}

Tensor sum_all(const Tensor& x) {
  return make_result("sum_all", {}, Eigen::ArrayXd::Constant(1, x.values().sum()), {x},
                     [](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       in[0]->accumulate_grad(Eigen::ArrayXd::Constant(in[0]->values.size(), g[0]));
                     });
}

Tensor mean_all(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  return make_result("mean_all", {}, Eigen::ArrayXd::Constant(1, x.values().sum() / n), {x},
                     [n](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       in[0]->accumulate_grad(Eigen::ArrayXd::Constant(in[0]->values.size(), g[0] / n));
                     });
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim: no parts");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw ShapeError("concat_lastdim: scalar part");
  const Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin())) {
      throw ShapeError("concat_lastdim: shape mismatch " + shape_to_string(first) + " vs " +
                       shape_to_string(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  if (parts.size() == 1) return parts.front();
  const std::size_t rows = shape_numel(lead);
  Eigen::ArrayXd out(static_cast<Eigen::Index>(rows * total));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t w = widths[p];
    const auto& v = parts[p].values();
    for (std::size_t r = 0; r < rows; ++r) out.segment(r * total + offset, w) = v.segment(r * w, w);
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  return make_result("concat_lastdim", shape, std::move(out), parts,
                     [widths, rows, total](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       std::size_t off = 0;
                       for (std::size_t p = 0; p < in.size(); ++p) {
                         const std::size_t w = widths[p];
                         if (in[p]->requires_grad) {
                           Eigen::ArrayXd gp(static_cast<Eigen::Index>(rows * w));
                           for (std::size_t r = 0; r < rows; ++r) gp.segment(r * w, w) = g.segment(r * total + off, w);
                           in[p]->accumulate_grad(gp);
                         }
                         off += w;
                       }
                     });
}

Tensor slice_lastdim(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin >= end || end > x.dim(-1)) {
    throw RangeError("slice_lastdim: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_to_string(x.shape()));
  }
  const std::size_t len = x.dim(-1);
  const std::size_t w = end - begin;
  const std::size_t rows = x.numel() / len;
  Eigen::ArrayXd out(static_cast<Eigen::Index>(rows * w));
  for (std::size_t r = 0; r < rows; ++r) out.segment(r * w, w) = x.values().segment(r * len + begin, w);
  Shape shape = x.shape();
  shape.back() = w;
  return make_result("slice_lastdim", shape, std::move(out), {x},
                     [rows, len, w, begin](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(rows * len));
                       for (std::size_t r = 0; r < rows; ++r) gx.segment(r * len + begin, w) = g.segment(r * w, w);
                       in[0]->accumulate_grad(gx);
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                     shape_to_string(shape));
  }
  return make_result("reshape", std::move(shape), x.values(), {x},
                     [](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       in[0]->accumulate_grad(g);
                     });
}

Tensor standardize_lastdim(const Tensor& x, double eps) {
  if (x.rank() == 0) throw ShapeError("standardize_lastdim: scalar input");
  const std::size_t len = x.dim(-1);
  const std::size_t rows = x.numel() / len;
  Eigen::ArrayXd out(x.values().size());
  Eigen::ArrayXd inv_std(static_cast<Eigen::Index>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = x.values().segment(r * len, len);
    const double mean = row.mean();
    const double var = (row - mean).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    out.segment(r * len, len) = (row - mean) * inv_std[r];
  }
  Eigen::ArrayXd y = out;
  return make_result("standardize_lastdim", x.shape(), std::move(out), {x},
                     [y = std::move(y), inv_std, rows, len](const Eigen::ArrayXd& g,
                                                            std::span<const ImplPtr> in) {
                       Eigen::ArrayXd gx(g.size());
                       for (std::size_t r = 0; r < rows; ++r) {
                         auto gr = g.segment(r * len, len);
                         auto yr = y.segment(r * len, len);
                         gx.segment(r * len, len) = inv_std[r] * (gr - gr.mean() - yr * (gr * yr).mean());
                       }
                       in[0]->accumulate_grad(gx);
                     });
}

Tensor gather_neighbors(const Tensor& x, const AdjacencyIndex& adj) {
  require_rank(x, 3, "gather_neighbors");
  check_adjacency(x, adj, "gather_neighbors");
  const std::size_t bsz = adj.batch, n = adj.nodes, k = adj.k, d = x.dim(2);
  Eigen::ArrayXd out(static_cast<Eigen::Index>(bsz * n * k * d));
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        out.segment(((b * n + i) * k + j) * d, d) = x.values().segment((b * n + adj(b, i, j)) * d, d);
      }
    }
  }
  return make_result("gather_neighbors", {bsz, n, k, d}, std::move(out), {x},
                     [adj, d](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(in[0]->values.size());
                       for (std::size_t b = 0; b < adj.batch; ++b) {
                         for (std::size_t i = 0; i < adj.nodes; ++i) {
                           for (std::size_t j = 0; j < adj.k; ++j) {
                             gx.segment((b * adj.nodes + adj(b, i, j)) * d, d) +=
                                 g.segment(((b * adj.nodes + i) * adj.k + j) * d, d);
                           }
                         }
                       }
                       in[0]->accumulate_grad(gx);
                     });
}

Tensor scatter_neighbors(const Tensor& msgs, const AdjacencyIndex& adj, ScatterMode mode) {
  require_rank(msgs, 4, "scatter_neighbors");
  if (msgs.dim(0) != adj.batch || msgs.dim(1) != adj.nodes || msgs.dim(2) != adj.k) {
    throw ShapeError("scatter_neighbors: messages " + shape_to_string(msgs.shape()) +
                     " do not match adjacency");
  }
  const std::size_t bsz = adj.batch, n = adj.nodes, k = adj.k, f = msgs.dim(3);
  Eigen::ArrayXd weight = Eigen::ArrayXd::Ones(static_cast<Eigen::Index>(bsz * n));
  if (mode == ScatterMode::Mean) {
    Eigen::ArrayXd count = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(bsz * n));
    for (std::size_t b = 0; b < bsz; ++b) {
      for (std::size_t i = 0; i < n * k; ++i) {
        const auto j = adj.index[b * n * k + i];
        if (j >= n) throw RangeError("scatter_neighbors: neighbour index out of range");
        count[b * n + j] += 1.0;
      }
    }
    weight = (count > 0.0).select(1.0 / count.max(1.0), 0.0);
  }
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(bsz * n * f));
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t dst = b * n + adj(b, i, j);
        out.segment(dst * f, f) += weight[dst] * msgs.values().segment(((b * n + i) * k + j) * f, f);
      }
    }
  }
  return make_result("scatter_neighbors", {bsz, n, f}, std::move(out), {msgs},
                     [adj, f, weight](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       Eigen::ArrayXd gm(in[0]->values.size());
                       const std::size_t n = adj.nodes, k = adj.k;
                       for (std::size_t b = 0; b < adj.batch; ++b) {
                         for (std::size_t i = 0; i < n; ++i) {
                           for (std::size_t j = 0; j < k; ++j) {
                             const std::size_t dst = b * n + adj(b, i, j);
                             gm.segment(((b * n + i) * k + j) * f, f) = weight[dst] * g.segment(dst * f, f);
                           }
                         }
                       }
                       in[0]->accumulate_grad(gm);
                     });
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw RangeError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::ArrayXd mask(x.values().size());
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask[i] = unit(rng) < rate ? 0.0 : keep;
  return make_result("dropout", x.shape(), x.values() * mask, {x},
                     [mask](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       in[0]->accumulate_grad(g * mask);
                     });
}

}  // namespace fvig
