#include "fvig/autodiff.hpp"
#include "fvig/cluster.hpp"
#include "fvig/errors.hpp"
#include "fvig/graph.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace fvig;

namespace {

AdjacencyIndex full_adjacency(std::size_t n) {
  AdjacencyIndex adj(1, n, n);
  for (std::size_t i = 0; i < n; ++i) {
    adj(0, i, 0) = static_cast<std::uint32_t>(i);
    std::size_t p = 1;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) adj(0, i, p++) = static_cast<std::uint32_t>(j);
  }
  return adj;
}

ClusterHeadParams identity_params(std::size_t dim) {
  ClusterHeadParams p;
  p.heads = 1;
  p.gate_scale = Tensor::ones({1}, true);
  p.gate_shift = Tensor::zeros({1}, true);
  Eigen::ArrayXd eye = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(dim * dim));
  for (std::size_t i = 0; i < dim; ++i) eye[i * dim + i] = 1.0;
  p.aggregate_proj = Tensor({dim, dim}, eye, true);
  p.dispatch_proj = Tensor({dim, dim}, eye, true);
  return p;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LoopResult {
  std::vector<double> clustered;  // [B, N, D']
  std::vector<double> gates;      // [B, N, K, M]
  std::vector<double> output;     // [B, N, D]
};

// Scalar-loop evaluation of clustering and dispatch for one configuration.
LoopResult loop_oracle(const Tensor& x, const AdjacencyIndex& adj, const ClusterHeadParams& p) {
  const std::size_t bsz = x.dim(0), n = x.dim(1), d = x.dim(2), dl = p.latent_dim(), k = adj.k,
                    m = p.heads, hw = d / m, hl = dl / m;
  LoopResult r;
  r.clustered.assign(bsz * n * dl, 0.0);
  r.gates.assign(bsz * n * k * m, 0.0);
  r.output.assign(bsz * n * d, 0.0);
  auto xv = [&](std::size_t b, std::size_t i, std::size_t c) { return x[(b * n + i) * d + c]; };
  auto project = [&](const std::vector<double>& v, std::size_t col) {
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) s += v[t] * p.aggregate_proj[t * dl + col];
    return s;
  };
  for (std::size_t b = 0; b < bsz; ++b) {
    std::vector<double> sums(n * d, 0.0);
    std::vector<std::size_t> count(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> center(d, 0.0);
      for (std::size_t q = 0; q < k; ++q)
        for (std::size_t c = 0; c < d; ++c) center[c] += xv(b, adj(b, i, q), c) / static_cast<double>(k);
      std::vector<double> pc(dl);
      for (std::size_t c = 0; c < dl; ++c) pc[c] = project(center, c);
      std::vector<std::vector<double>> pm(k, std::vector<double>(dl));
      for (std::size_t q = 0; q < k; ++q) {
        std::vector<double> member(d);
        for (std::size_t c = 0; c < d; ++c) member[c] = xv(b, adj(b, i, q), c);
        for (std::size_t c = 0; c < dl; ++c) pm[q][c] = project(member, c);
      }
      for (std::size_t h = 0; h < m; ++h) {
        double lambda = 1.0;
        std::vector<double> acc(pc.begin() + h * hl, pc.begin() + (h + 1) * hl);
        for (std::size_t q = 0; q < k; ++q) {
          double dot = 0, na = 0, nb = 0;
          for (std::size_t c = h * hw; c < (h + 1) * hw; ++c) {
            const double mv = xv(b, adj(b, i, q), c);
            dot += center[c] * mv;
            na += center[c] * center[c];
            nb += mv * mv;
          }
          const double s = dot / (std::max(std::sqrt(na), p.sim_eps) * std::max(std::sqrt(nb), p.sim_eps));
          const double g = sigmoid_ref(p.gate_scale[h] * s + p.gate_shift[h]);
          r.gates[((b * n + i) * k + q) * m + h] = g;
          lambda += g;
          for (std::size_t c = 0; c < hl; ++c) acc[c] += g * pm[q][h * hl + c];
        }
        for (std::size_t c = 0; c < hl; ++c) r.clustered[(b * n + i) * dl + h * hl + c] = acc[c] / lambda;
      }
      for (std::size_t q = 0; q < k; ++q) {
        const std::size_t j = adj(b, i, q);
        ++count[j];
        for (std::size_t c = 0; c < d; ++c) {
          double v = 0.0;
          for (std::size_t t = 0; t < dl; ++t) {
            const double g = r.gates[((b * n + i) * k + q) * m + t / hl];
            v += g * r.clustered[(b * n + i) * dl + t] * p.dispatch_proj[t * d + c];
          }
          sums[j * d + c] += v;
        }
      }
    }
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t c = 0; c < d; ++c) {
        const double msg = count[j] == 0 ? 0.0
                           : p.overlap == ScatterMode::Mean ? sums[j * d + c] / static_cast<double>(count[j])
                                                            : sums[j * d + c];
        r.output[(b * n + j) * d + c] = xv(b, j, c) + msg;
      }
  }
  return r;
}

ClusterHeadParams random_params(std::size_t d, std::size_t dl, std::size_t m, std::mt19937_64& rng) {
  auto p = ClusterHeadParams::init(d, dl, m, rng);
  p.gate_scale = random_uniform({m}, 0.5, 2.0, rng, true);
  p.gate_shift = random_uniform({m}, -1.0, 1.0, rng, true);
  return p;
}

}  // namespace

TEST(Centers, MeanOfNeighbourhood) {
  const Tensor x = Tensor::from({1, 2, 2}, {0, 0, 2, 2});
  const Tensor c = cluster_centers(x, full_adjacency(2));
  EXPECT_EQ(oracle::to_vec(c), (std::vector<double>{1, 1, 1, 1}));
}

TEST(Similarity, MemberEqualToCenter) {
  const Tensor x = Tensor::from({1, 3, 2}, {0, 0, 2, 4, 1, 2});
  auto p = identity_params(2);
  p.gate_scale = Tensor::from({1}, {0.7});
  p.gate_shift = Tensor::from({1}, {0.3});
  const auto adj = full_adjacency(3);
  const Tensor c = cluster_centers(x, adj);
  const auto ms = member_similarity(c, x, adj, p);
  // Row for node 2 lists itself first; it equals the center [1, 2].
  EXPECT_NEAR(ms.similarity[2 * 3 + 0], 1.0, 1e-15);
  EXPECT_NEAR(ms.gates[2 * 3 + 0], sigmoid_ref(1.0), 1e-15);
}

TEST(Similarity, ZeroGateParamsGiveOneHalf) {
  std::mt19937_64 rng(1);
  const Tensor x = random_normal({1, 5, 4}, 1.0, rng);
  auto p = ClusterHeadParams::init(4, 4, 2, rng);
  p.gate_scale = Tensor::zeros({2});
  const auto adj = full_adjacency(5);
  const auto ms = member_similarity(cluster_centers(x, adj), x, adj, p);
  EXPECT_TRUE((ms.gates.values() == 0.5).all());
  EXPECT_LE(ms.similarity.values().abs().maxCoeff(), 1.0 + 1e-12);
}

TEST(AggregateSingle, OneMemberHalfGate) {
  const Tensor c = Tensor::from({2}, {1, 3});
  const Tensor v = Tensor::from({1, 2}, {4, -3});
  const auto r = aggregate_single(c, v, Tensor::from({1}, {0.5}));
  EXPECT_NEAR(r.feature[0], (1 + 2.0) / 1.5, 1e-15);
  EXPECT_NEAR(r.feature[1], (3 - 1.5) / 1.5, 1e-15);
  EXPECT_DOUBLE_EQ(r.lambda.item(), 1.5);
}

TEST(AggregateSingle, LambdaAtLeastOneAndShapeChecks) {
  std::mt19937_64 rng(2);
  const auto r = aggregate_single(random_normal({3, 4}, 1.0, rng), random_normal({3, 5, 4}, 1.0, rng),
                                  random_uniform({3, 5}, 0.0, 1.0, rng));
  EXPECT_GE(r.lambda.values().minCoeff(), 1.0);
  EXPECT_THROW(aggregate_single(Tensor::zeros({4}), Tensor::zeros({5, 3}), Tensor::zeros({5})), ShapeError);
}

TEST(Multihead, MatchesLoopOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t n = 10, k = 4, m = trial % 2 ? 2 : 4;
    const Tensor x = random_normal({2, n, 8}, 1.0, rng);
    const auto adj = build_graph(x, std::nullopt, {k, 1 + trial % 2, false});
    const auto p = random_params(8, 12, m, rng);
    const auto got = aggregate_multihead(x, adj, p);
    const auto want = loop_oracle(x, adj, p);
    ASSERT_EQ(got.clustered.shape(), (Shape{2, n, 12}));
    ASSERT_EQ(got.state.gates.shape(), (Shape{2, n, k, m}));
    for (std::size_t i = 0; i < want.clustered.size(); ++i) EXPECT_NEAR(got.clustered[i], want.clustered[i], 1e-12);
    for (std::size_t i = 0; i < want.gates.size(); ++i) EXPECT_NEAR(got.state.gates[i], want.gates[i], 1e-14);
    EXPECT_GE(got.state.lambda.values().minCoeff(), 1.0);
  }
}

TEST(Multihead, SingleHeadIdentityProjectionIsAggregateSingle) {
  std::mt19937_64 rng(4);
  const Tensor x = random_normal({1, 6, 3}, 1.0, rng);
  const auto adj = build_graph(x, std::nullopt, {3, 1, false});
  const auto p = identity_params(3);
  const auto got = aggregate_multihead(x, adj, p);
  const Tensor members = gather_neighbors(x, adj);
  Shape gs = got.state.gates.shape();
  gs.pop_back();
  const auto want = aggregate_single(got.state.centers, members, reshape(got.state.gates, gs));
  for (std::size_t i = 0; i < want.feature.numel(); ++i) EXPECT_NEAR(got.clustered[i], want.feature[i], 1e-14);
}

TEST(Multihead, HeadsMustDivideWidths) {
  std::mt19937_64 rng(5);
  const Tensor x = random_normal({1, 4, 6}, 1.0, rng);
  const auto p = ClusterHeadParams::init(6, 8, 4, rng);
  EXPECT_THROW(aggregate_multihead(x, full_adjacency(4), p), ConfigError);
}

TEST(Dispatch, MatchesLoopOracleInBothOverlapModes) {
  std::mt19937_64 rng(6);
  for (auto mode : {ScatterMode::Mean, ScatterMode::Sum}) {
    const Tensor x = random_normal({2, 9, 8}, 1.0, rng);
    const auto adj = build_graph(x, std::nullopt, {3, 2, false});
    auto p = random_params(8, 4, 2, rng);
    p.overlap = mode;
    const Tensor got = spatial_cluster_forward(x, adj, p);
    const auto want = loop_oracle(x, adj, p);
    for (std::size_t i = 0; i < want.output.size(); ++i) EXPECT_NEAR(got[i], want.output[i], 1e-12);
  }
}

TEST(Dispatch, ClosedGatesLeaveFeatures) {
  std::mt19937_64 rng(7);
  const Tensor x = random_normal({1, 16, 8}, 1.0, rng);
  const auto adj = build_graph(x, std::nullopt, {5, 1, false});
  auto p = ClusterHeadParams::init(8, 8, 4, rng);
  p.gate_shift = Tensor::full({4}, -40.0);
  const Tensor y = spatial_cluster_forward(x, adj, p);
  EXPECT_LE((y.values() - x.values()).abs().maxCoeff(), 1e-9);
}

TEST(Dispatch, PermutationEquivariant) {
  std::mt19937_64 rng(8);
  const std::size_t n = 12, d = 4;
  const Tensor x = random_normal({1, n, d}, 1.0, rng);
  const auto p = random_params(d, d, 2, rng);
  const auto perm = oracle::random_permutation(n, rng);
  Eigen::ArrayXd pv(x.values().size());
  for (std::size_t q = 0; q < n; ++q) pv.segment(q * d, d) = x.values().segment(perm[q] * d, d);
  const Tensor xp({1, n, d}, pv);
  const Tensor y = spatial_cluster_forward(x, build_graph(x, std::nullopt, {4, 1, false}), p);
  const Tensor yp = spatial_cluster_forward(xp, build_graph(xp, std::nullopt, {4, 1, false}), p);
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(yp[q * d + c], y[perm[q] * d + c], 1e-12);
}

TEST(Dispatch, GradientsReachGateParameters) {
  std::mt19937_64 rng(9);
  const Tensor x = random_normal({1, 8, 4}, 1.0, rng, true);
  const auto p = random_params(4, 4, 2, rng);
  backward(sum_all(spatial_cluster_forward(x, build_graph(x, std::nullopt, {3, 1, false}), p)));
  EXPECT_GT(p.gate_scale.grad().abs().maxCoeff(), 0.0);
  EXPECT_GT(p.gate_shift.grad().abs().maxCoeff(), 0.0);
  EXPECT_GT(p.dispatch_proj.grad().abs().maxCoeff(), 0.0);
  EXPECT_GT(x.grad().abs().maxCoeff(), 0.0);
}
