#pragma once

#include "fvig/adjacency.hpp"
#include "fvig/tensor.hpp"

#include <random>
#include <span>
#include <vector>

namespace fvig {

// Shapes broadcast with trailing-dimension rules: dimensions are aligned from
// the right and each pair must be equal or contain a 1.

/// Batched matrix product of [..., M, K] and [..., K, P]; batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the two trailing axes.
Tensor transpose_last2(const Tensor& x);

Tensor broadcast_add(const Tensor& a, const Tensor& b);
Tensor broadcast_sub(const Tensor& a, const Tensor& b);
Tensor broadcast_mul(const Tensor& a, const Tensor& b);
Tensor broadcast_div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return broadcast_add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return broadcast_sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return broadcast_mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return broadcast_div(a, b); }
inline Tensor operator*(const Tensor& x, double c) { return scale(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }
inline Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }

enum class ActivationKind { LeakyRelu, Sigmoid, Gelu };

struct Activation {
  ActivationKind kind = ActivationKind::Gelu;
  double slope = 0.2;  // leaky_relu only

  static Activation leaky_relu(double slope = 0.2) { return {ActivationKind::LeakyRelu, slope}; }
  static Activation sigmoid() { return {ActivationKind::Sigmoid, 0.0}; }
  static Activation gelu() { return {ActivationKind::Gelu, 0.0}; }
};

/// Elementwise activation. Gelu uses the tanh approximation.
Tensor activation(const Tensor& x, Activation kind);
inline Tensor leaky_relu(const Tensor& x, double slope = 0.2) {
  return activation(x, Activation::leaky_relu(slope));
}
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::sigmoid()); }
inline Tensor gelu(const Tensor& x) { return activation(x, Activation::gelu()); }

/// Numerically stable softmax over the last axis (max subtracted per row).
Tensor softmax_lastdim(const Tensor& x);

/// a·b / (max(|a|, eps) · max(|b|, eps)) over the last axis. Leading axes
/// broadcast; the trailing axis must match.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps = 1e-8);

enum class Reduction { Mean, Max, Sum };

/// Reduces one axis (negative counts from the end) and drops it. Max routes
/// the gradient to the first maximal element.
Tensor reduce(const Tensor& x, int axis, Reduction kind);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor concat_lastdim(const std::vector<Tensor>& parts);
/// Columns [begin, end) of the last axis.
Tensor slice_lastdim(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

/// Per-row standardisation over the last axis: (x - mean) / sqrt(var + eps).
Tensor standardize_lastdim(const Tensor& x, double eps = 1e-5);

/// out[b,i,k,:] = x[b, adj(b,i,k), :]; backward scatter-adds into x.
Tensor gather_neighbors(const Tensor& x, const AdjacencyIndex& adj);

enum class ScatterMode { Mean, Sum };

/// Inverse of gather: msgs[b,i,k,:] is added to out[b, adj(b,i,k), :]. In Mean
/// mode each output row is divided by how many (i,k) slots point at it.
Tensor scatter_neighbors(const Tensor& msgs, const AdjacencyIndex& adj, ScatterMode mode);

/// Inverted dropout: training zeros each element with probability `rate` and
/// scales survivors by 1/(1-rate); evaluation is the identity.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);

}  // namespace fvig
