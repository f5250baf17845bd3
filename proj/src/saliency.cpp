#include "fvig/saliency.hpp"

#include "fvig/errors.hpp"
#include "fvig/ops.hpp"

#include <cmath>

namespace fvig {

SaliencyProjection SaliencyProjection::init(std::size_t dim, std::size_t latent_dim,
                                            std::mt19937_64& rng) {
  const double wb = 1.0 / std::sqrt(static_cast<double>(dim));
  const double sb = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  SaliencyProjection p;
  p.projection = random_uniform({dim, latent_dim}, -wb, wb, rng, true);
  p.self_score = random_uniform({latent_dim, 1}, -sb, sb, rng, true);
  p.neighbor_score = random_uniform({latent_dim, 1}, -sb, sb, rng, true);
  return p;
}

SaliencyProjection SaliencyProjection::zeros(std::size_t dim, std::size_t latent_dim) {
  SaliencyProjection p;
  p.projection = Tensor::zeros({dim, latent_dim}, true);
  p.self_score = Tensor::zeros({latent_dim, 1}, true);
  p.neighbor_score = Tensor::zeros({latent_dim, 1}, true);
  return p;
}

Tensor project_nodes(const Tensor& features, const Tensor& projection) {
  if (features.rank() != 3 || projection.rank() != 2) {
    throw ShapeError("project_nodes: expected [B, N, D] and [D, D'], got " +
                     shape_to_string(features.shape()) + " and " + shape_to_string(projection.shape()));
  }
  return matmul(features, projection);
}

SaliencyScores saliency_scores(const Tensor& projected, const SaliencyProjection& params) {
  return {matmul(projected, params.self_score),
          transpose_last2(matmul(projected, params.neighbor_score))};
}

Tensor saliency_matrix(const Tensor& self_scores, const Tensor& neighbor_scores) {
  if (self_scores.rank() != 3 || neighbor_scores.rank() != 3 || self_scores.dim(2) != 1 ||
      neighbor_scores.dim(1) != 1 || self_scores.dim(0) != neighbor_scores.dim(0) ||
      self_scores.dim(1) != neighbor_scores.dim(2)) {
    throw ShapeError("saliency_matrix: expected [B, N, 1] and [B, 1, N], got " +
                     shape_to_string(self_scores.shape()) + " and " +
                     shape_to_string(neighbor_scores.shape()));
  }
  return broadcast_add(self_scores, neighbor_scores);
}

Tensor attention_normalize(const Tensor& scores, double leaky_slope) {
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw RangeError("attention_normalize: LeakyReLU slope must be in (0, 1)");
  }
  return softmax_lastdim(leaky_relu(scores, leaky_slope));
}

Tensor channel_saliency_forward(const Tensor& features, const SaliencyProjection& params) {
  const Tensor projected = project_nodes(features, params.projection);
  const auto [self, neighbor] = saliency_scores(projected, params);
  return attention_normalize(saliency_matrix(self, neighbor), params.leaky_slope);
}

}  // namespace fvig
