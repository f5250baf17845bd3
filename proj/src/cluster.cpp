#include "fvig/cluster.hpp"

#include "fvig/errors.hpp"

#include <cmath>

namespace fvig {

namespace {

void check_heads(const ClusterHeadParams& params, std::size_t dim) {
  if (params.heads == 0) throw ConfigError("cluster heads must be at least 1");
  if (dim % params.heads != 0 || params.latent_dim() % params.heads != 0) {
    throw ConfigError("cluster heads " + std::to_string(params.heads) + " must divide D=" +
                      std::to_string(dim) + " and D'=" + std::to_string(params.latent_dim()));
  }
}

Tensor append_axis(const Tensor& x) {
  Shape s = x.shape();
  s.push_back(1);
  return reshape(x, std::move(s));
}

Tensor insert_axis(const Tensor& x, std::size_t axis) {
  Shape s = x.shape();
  s.insert(s.begin() + static_cast<std::ptrdiff_t>(axis), 1);
  return reshape(x, std::move(s));
}

Tensor drop_last_axis(const Tensor& x) {
  Shape s = x.shape();
  s.pop_back();
  return reshape(x, std::move(s));
}

Tensor head_slice(const Tensor& x, std::size_t head, std::size_t heads) {
  const std::size_t w = x.dim(-1) / heads;
  return slice_lastdim(x, head * w, (head + 1) * w);
}

}  // namespace

ClusterHeadParams ClusterHeadParams::init(std::size_t dim, std::size_t latent_dim, std::size_t heads,
                                          std::mt19937_64& rng) {
  ClusterHeadParams p;
  p.heads = heads;
  p.gate_scale = Tensor::ones({heads}, true);
  p.gate_shift = Tensor::zeros({heads}, true);
  const double ab = 1.0 / std::sqrt(static_cast<double>(dim));
  const double db = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  p.aggregate_proj = random_uniform({dim, latent_dim}, -ab, ab, rng, true);
  p.dispatch_proj = random_uniform({latent_dim, dim}, -db, db, rng, true);
  return p;
}

Tensor cluster_centers(const Tensor& features, const AdjacencyIndex& adj) {
  return reduce(gather_neighbors(features, adj), 2, Reduction::Mean);
}

MemberSimilarity member_similarity(const Tensor& centers, const Tensor& features,
                                   const AdjacencyIndex& adj, const ClusterHeadParams& params) {
  check_heads(params, features.dim(-1));
  const Tensor members = gather_neighbors(features, adj);  // [B, N, K, D]
  const Tensor center = insert_axis(centers, 2);           // [B, N, 1, D]
  std::vector<Tensor> per_head;
  for (std::size_t m = 0; m < params.heads; ++m) {
    per_head.push_back(append_axis(cosine_similarity(head_slice(center, m, params.heads),
                                                     head_slice(members, m, params.heads),
                                                     params.sim_eps)));
  }
  Tensor s = concat_lastdim(per_head);  // [B, N, K, M]
  Tensor g = sigmoid(s * params.gate_scale + params.gate_shift);
  return {std::move(s), std::move(g)};
}

SingleAggregate aggregate_single(const Tensor& center, const Tensor& members, const Tensor& gates) {
  if (members.rank() < 2 || center.rank() + 1 != members.rank() ||
      gates.rank() + 1 != members.rank() || center.dim(-1) != members.dim(-1) ||
      gates.dim(-1) != members.dim(-2)) {
    throw ShapeError("aggregate_single: center " + shape_to_string(center.shape()) + ", members " +
                     shape_to_string(members.shape()) + ", gates " + shape_to_string(gates.shape()));
  }
  const int k_axis = static_cast<int>(members.rank()) - 2;
  Tensor weighted = reduce(members * append_axis(gates), k_axis, Reduction::Sum);
  Tensor lambda = reduce(gates, -1, Reduction::Sum) + 1.0;
  Tensor feature = (center + weighted) / append_axis(lambda);
  return {std::move(feature), std::move(lambda)};
}

MultiheadAggregate aggregate_multihead(const Tensor& features, const AdjacencyIndex& adj,
                                       const ClusterHeadParams& params) {
  check_heads(params, features.dim(-1));
  MultiheadAggregate out;
  out.state.centers = cluster_centers(features, adj);
  auto [s, g] = member_similarity(out.state.centers, features, adj, params);
  out.state.similarity = s;
  out.state.gates = g;

  const Tensor proj_center = matmul(out.state.centers, params.aggregate_proj);             // [B,N,D']
  const Tensor proj_members = matmul(gather_neighbors(features, adj), params.aggregate_proj);  // [B,N,K,D']
  std::vector<Tensor> heads, lambdas;
  for (std::size_t m = 0; m < params.heads; ++m) {
    auto agg = aggregate_single(head_slice(proj_center, m, params.heads),
                                head_slice(proj_members, m, params.heads),
                                drop_last_axis(slice_lastdim(g, m, m + 1)));
    heads.push_back(std::move(agg.feature));
    lambdas.push_back(append_axis(agg.lambda));
  }
  out.clustered = concat_lastdim(heads);
  out.state.lambda = concat_lastdim(lambdas);
  return out;
}

Tensor dispatch(const Tensor& features, const AdjacencyIndex& adj, const Tensor& clustered,
                const Tensor& gates, const ClusterHeadParams& params) {
  check_heads(params, features.dim(-1));
  const Tensor cluster = insert_axis(clustered, 2);  // [B, N, 1, D']
  std::vector<Tensor> per_head;
  for (std::size_t m = 0; m < params.heads; ++m) {
    per_head.push_back(slice_lastdim(gates, m, m + 1) * head_slice(cluster, m, params.heads));
  }
  const Tensor messages = matmul(concat_lastdim(per_head), params.dispatch_proj);  // [B,N,K,D]
  return features + scatter_neighbors(messages, adj, params.overlap);
}

Tensor spatial_cluster_forward(const Tensor& features, const AdjacencyIndex& adj,
                               const ClusterHeadParams& params) {
  auto agg = aggregate_multihead(features, adj, params);
  return dispatch(features, adj, agg.clustered, agg.state.gates, params);
}

}  // namespace fvig
