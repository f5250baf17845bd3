#pragma once

#include "fvig/adjacency.hpp"
#include "fvig/tensor.hpp"

#include <Eigen/Core>

#include <optional>
#include <vector>

namespace fvig {

/// Per-batch N x N squared Euclidean distances. Symmetric, zero diagonal.
struct DistanceMatrix {
  std::vector<Eigen::MatrixXd> batches;

  std::size_t batch() const { return batches.size(); }
  std::size_t nodes() const { return batches.empty() ? 0 : static_cast<std::size_t>(batches[0].rows()); }
  const Eigen::MatrixXd& operator[](std::size_t b) const { return batches[b]; }
};

/// Per-layer dilation rates.
struct DilationSchedule {
  std::vector<std::size_t> rates;

  /// rate(layer) = min(max_rate, base + layer / step).
  static DilationSchedule stepped(std::size_t depth, std::size_t base = 1, std::size_t step = 4,
                                  std::size_t max_rate = 4);
  static DilationSchedule constant(std::size_t depth, std::size_t rate = 1);
  std::size_t max_rate() const;
};

DistanceMatrix pairwise_sq_euclidean(const Tensor& features);

/// Row i: node i first, then the k-1 nearest other nodes by distance, ties
/// broken by smaller index.
AdjacencyIndex knn_adjacency(const DistanceMatrix& dist, std::size_t k);

/// As knn_adjacency but ranks candidates by alpha_ij * dist_ij (smallest
/// first). `alpha` is [B, N, N] with rows summing to 1 within 1e-6.
AdjacencyIndex saliency_adjacency(const Tensor& alpha, const DistanceMatrix& dist, std::size_t k);

/// Takes positions 0, d, 2d, ... of the k*d nearest ordered candidates.
AdjacencyIndex dilated_select(const DistanceMatrix& dist, std::size_t k, std::size_t d);

struct GraphConfig {
  std::size_t k = 12;
  std::size_t dilation = 1;
  bool use_saliency = false;
};

/// Distance, optional saliency weighting, top-k and dilation in one step.
/// `alpha` is required when config.use_saliency is set.
AdjacencyIndex build_graph(const Tensor& features, const std::optional<Tensor>& alpha,
                           const GraphConfig& config);

/// Self first, entries in range, no duplicates per row.
bool is_valid_adjacency(const AdjacencyIndex& adj);

}  // namespace fvig
