#pragma once

#include "fvig/tensor.hpp"

#include <random>

namespace fvig {

/// Trainable parameters of the channel-aware saliency attention.
struct SaliencyProjection {
  Tensor projection;      // [D, D'], V' = V * projection
  Tensor self_score;      // [D', 1]
  Tensor neighbor_score;  // [D', 1]
  double leaky_slope = 0.2;

  static SaliencyProjection init(std::size_t dim, std::size_t latent_dim, std::mt19937_64& rng);
  static SaliencyProjection zeros(std::size_t dim, std::size_t latent_dim);
};

/// [B, N, D] x [D, D'] -> [B, N, D'].
Tensor project_nodes(const Tensor& features, const Tensor& projection);

struct SaliencyScores {
  Tensor self;      // [B, N, 1]
  Tensor neighbor;  // [B, 1, N]
};

SaliencyScores saliency_scores(const Tensor& projected, const SaliencyProjection& params);

/// S[b,i,j] = self[b,i] + neighbor[b,j].
Tensor saliency_matrix(const Tensor& self_scores, const Tensor& neighbor_scores);

/// alpha = softmax over j of LeakyReLU(S[b,i,j]), normalised over all N columns.
Tensor attention_normalize(const Tensor& scores, double leaky_slope = 0.2);

/// Full chain: projection, scores, broadcast sum, activation and softmax.
Tensor channel_saliency_forward(const Tensor& features, const SaliencyProjection& params);

}  // namespace fvig
