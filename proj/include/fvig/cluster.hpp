#pragma once

#include "fvig/adjacency.hpp"
#include "fvig/ops.hpp"
#include "fvig/tensor.hpp"

#include <random>

namespace fvig {

/// Learnable parameters of multi-head neighbourhood clustering.
///
/// Features are split channel-wise into `heads` groups for similarity and
/// gating. The aggregation projection acts on the full feature vector and its
/// output is sliced into per-head groups, so one shared matrix serves all heads.
struct ClusterHeadParams {
  std::size_t heads = 4;
  Tensor gate_scale;      // [M], alpha per head, init 1
  Tensor gate_shift;      // [M], beta per head, init 0
  Tensor aggregate_proj;  // [D, D'], x * aggregate_proj == W x
  Tensor dispatch_proj;   // [D', D], maps cluster features back to width D
  double sim_eps = 1e-8;
  ScatterMode overlap = ScatterMode::Mean;

  static ClusterHeadParams init(std::size_t dim, std::size_t latent_dim, std::size_t heads,
                                std::mt19937_64& rng);
  std::size_t dim() const { return aggregate_proj.dim(0); }
  std::size_t latent_dim() const { return aggregate_proj.dim(1); }
};

struct ClusterState {
  Tensor centers;     // [B, N, D], mean of each neighbourhood
  Tensor similarity;  // [B, N, K, M], cosine(center, member) per head
  Tensor gates;       // [B, N, K, M], sigmoid(alpha * s + beta)
  Tensor lambda;      // [B, N, M], 1 + sum of gates
};

Tensor cluster_centers(const Tensor& features, const AdjacencyIndex& adj);

struct MemberSimilarity {
  Tensor similarity;  // [B, N, K, M]
  Tensor gates;       // [B, N, K, M]
};

MemberSimilarity member_similarity(const Tensor& centers, const Tensor& features,
                                   const AdjacencyIndex& adj, const ClusterHeadParams& params);

struct SingleAggregate {
  Tensor feature;  // [..., D]
  Tensor lambda;   // [...]
};

/// (center + sum_j g_j * member_j) / (1 + sum_j g_j), batched over leading
/// axes: center [..., D], members [..., K, D], gates [..., K].
SingleAggregate aggregate_single(const Tensor& center, const Tensor& members, const Tensor& gates);

struct MultiheadAggregate {
  Tensor clustered;  // [B, N, D']
  ClusterState state;
};

MultiheadAggregate aggregate_multihead(const Tensor& features, const AdjacencyIndex& adj,
                                       const ClusterHeadParams& params);

/// v_j + W' (g_ij * C_f'(i)) accumulated over every cluster i containing j,
/// combined per params.overlap (mean over memberships by default).
Tensor dispatch(const Tensor& features, const AdjacencyIndex& adj, const Tensor& clustered,
                const Tensor& gates, const ClusterHeadParams& params);

/// aggregate_multihead followed by dispatch.
Tensor spatial_cluster_forward(const Tensor& features, const AdjacencyIndex& adj,
                               const ClusterHeadParams& params);

}  // namespace fvig
