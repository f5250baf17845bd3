#include "fvig/errors.hpp"
#include "fvig/graph.hpp"
#include "fvig/ops.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace fvig;

namespace {

DistanceMatrix from_rows(std::vector<std::vector<double>> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = rows[i][j];
  return {{m}};
}

std::vector<std::vector<double>> flat(const DistanceMatrix& d) {
  std::vector<std::vector<double>> out;
  for (const auto& m : d.batches) {
    std::vector<double> v;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::vector<double>> flat(const Tensor& alpha) {
  const std::size_t per = alpha.dim(1) * alpha.dim(2);
  std::vector<std::vector<double>> out;
  for (std::size_t b = 0; b < alpha.dim(0); ++b)
    out.emplace_back(alpha.values().data() + b * per, alpha.values().data() + (b + 1) * per);
  return out;
}

Tensor random_alpha(std::size_t b, std::size_t n, std::mt19937_64& rng) {
  return softmax_lastdim(random_normal({b, n, n}, 1.5, rng));
}

// Integer-valued distances so that ties are frequent.
DistanceMatrix tied_distances(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(1, 4);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = m(j, i) = pick(rng);
  return {{m}};
}

}  // namespace

TEST(Distances, ThreeFourFive) {
  const auto d = pairwise_sq_euclidean(Tensor::from({1, 2, 2}, {0, 0, 3, 4}));
  EXPECT_EQ(d[0](0, 0), 0.0);
  EXPECT_EQ(d[0](0, 1), 25.0);
  EXPECT_EQ(d[0](1, 0), 25.0);
  EXPECT_EQ(d[0](1, 1), 0.0);
}

TEST(Distances, SingleNode) {
  const auto d = pairwise_sq_euclidean(Tensor::from({1, 1, 3}, {1, 2, 3}));
  EXPECT_EQ(d[0].rows(), 1);
  EXPECT_EQ(d[0](0, 0), 0.0);
}

TEST(Distances, MatchLoopOracleAndInvariants) {
  std::mt19937_64 rng(1);
  Tensor v = random_normal({2, 6, 3}, 1.0, rng);
  const auto d = pairwise_sq_euclidean(v);
  const auto want = oracle::sq_distances(v);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_NEAR(d[b](i, j), want[b][i][j], 1e-10);
        EXPECT_EQ(d[b](i, j), d[b](j, i));
        EXPECT_GE(d[b](i, j), 0.0);
      }
}

TEST(Knn, HandExample) {
  const auto adj = knn_adjacency(from_rows({{0, 1, 2}, {1, 0, 3}, {2, 3, 0}}), 2);
  EXPECT_EQ(adj(0, 0, 0), 0u);
  EXPECT_EQ(adj(0, 0, 1), 1u);
  EXPECT_EQ(adj(0, 2, 1), 0u);
}

TEST(Knn, FullKIsPermutation) {
  std::mt19937_64 rng(2);
  const auto adj = knn_adjacency(pairwise_sq_euclidean(random_normal({1, 7, 2}, 1.0, rng)), 7);
  EXPECT_TRUE(is_valid_adjacency(adj));
}

TEST(Knn, TiesBreakBySmallerIndex) {
  const auto adj = knn_adjacency(from_rows({{0, 1, 1, 1}, {1, 0, 1, 1}, {1, 1, 0, 1}, {1, 1, 1, 0}}), 3);
  EXPECT_EQ(std::vector<std::uint32_t>(adj.row(0, 2).begin(), adj.row(0, 2).end()),
            (std::vector<std::uint32_t>{2, 0, 1}));
}

TEST(Knn, SelfFirstEvenWithDuplicateNode) {
  // Nodes 0 and 1 coincide: node 1 must still list itself first.
  const auto adj = knn_adjacency(pairwise_sq_euclidean(Tensor::from({1, 3, 1}, {5, 5, 9})), 2);
  EXPECT_EQ(adj(0, 1, 0), 1u);
  EXPECT_EQ(adj(0, 1, 1), 0u);
  EXPECT_TRUE(is_valid_adjacency(adj));
}

TEST(Knn, KOutOfRange) {
  const auto d = from_rows({{0, 1}, {1, 0}});
  EXPECT_THROW(knn_adjacency(d, 0), RangeError);
  EXPECT_THROW(knn_adjacency(d, 3), RangeError);
}

TEST(Knn, RandomInstancesMatchSortOracle) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> nd(1, 64);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = nd(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n)(rng);
    const DistanceMatrix d = trial % 2 ? tied_distances(n, rng) : pairwise_sq_euclidean(random_normal({1, n, 3}, 1.0, rng));
    EXPECT_EQ(knn_adjacency(d, k), oracle::select(flat(d), nullptr, n, k, 1)) << "n=" << n << " k=" << k;
  }
}

TEST(Saliency, UniformAlphaEqualsKnn) {
  std::mt19937_64 rng(4);
  const auto d = pairwise_sq_euclidean(random_normal({2, 9, 3}, 1.0, rng));
  const Tensor uniform = softmax_lastdim(Tensor::zeros({2, 9, 9}));
  EXPECT_EQ(saliency_adjacency(uniform, d, 4), knn_adjacency(d, 4));
}

TEST(Saliency, HandForcedOrdering) {
  const auto d = from_rows({{0, 1, 2}, {1, 0, 1}, {2, 1, 0}});
  const Tensor alpha = Tensor::from({1, 3, 3}, {0.5, 0.4, 0.1, 1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3});
  const auto adj = saliency_adjacency(alpha, d, 2);
  EXPECT_EQ(adj(0, 0, 0), 0u);
  EXPECT_EQ(adj(0, 0, 1), 2u);
}

TEST(Saliency, UnnormalisedAlphaRejected) {
  const auto d = from_rows({{0, 1}, {1, 0}});
  EXPECT_THROW(saliency_adjacency(Tensor::from({1, 2, 2}, {0.5, 0.6, 0.5, 0.5}), d, 1), RangeError);
  EXPECT_THROW(saliency_adjacency(Tensor::from({1, 1, 2}, {0.5, 0.5}), d, 1), ShapeError);
}

TEST(Saliency, RandomInstancesMatchWeightedSortOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n)(rng);
    const auto d = pairwise_sq_euclidean(random_normal({2, n, 4}, 1.0, rng));
    const Tensor alpha = random_alpha(2, n, rng);
    const auto fa = flat(alpha);
    EXPECT_EQ(saliency_adjacency(alpha, d, k), oracle::select(flat(d), &fa, n, k, 1));
  }
}

TEST(Saliency, RowConstantAlphaEqualsKnn) {
  std::mt19937_64 rng(6);
  const std::size_t n = 8;
  const auto d = pairwise_sq_euclidean(random_normal({1, n, 2}, 1.0, rng));
  const Tensor alpha = Tensor::full({1, n, n}, 0.125);
  EXPECT_EQ(saliency_adjacency(alpha, d, 5), knn_adjacency(d, 5));
}

TEST(Dilation, RateOneEqualsKnn) {
  std::mt19937_64 rng(7);
  const auto d = pairwise_sq_euclidean(random_normal({2, 12, 3}, 1.0, rng));
  EXPECT_EQ(dilated_select(d, 5, 1), knn_adjacency(d, 5));
}

TEST(Dilation, TakesEveryDthCandidate) {
  // Row 0 distances make the sorted order 0, 3, 5, 1, 7, 2, 6, 4.
  std::vector<std::vector<double>> rows(8, std::vector<double>(8, 1.0));
  const double r0[8] = {0, 4, 6, 2, 8, 3, 7, 5};
  for (int j = 0; j < 8; ++j) rows[0][j] = rows[j][0] = r0[j];
  for (int i = 0; i < 8; ++i) rows[i][i] = 0;
  const auto adj = dilated_select(from_rows(rows), 2, 2);
  EXPECT_EQ(adj(0, 0, 0), 0u);
  EXPECT_EQ(adj(0, 0, 1), 5u);
  const auto adj4 = dilated_select(from_rows(rows), 2, 4);
  EXPECT_EQ(adj4(0, 0, 1), 7u);
}

TEST(Dilation, TooLargeRejected) {
  const auto d = from_rows({{0, 1, 2}, {1, 0, 1}, {2, 1, 0}});
  EXPECT_THROW(dilated_select(d, 2, 2), RangeError);
  EXPECT_THROW(dilated_select(d, 1, 0), RangeError);
}

TEST(Dilation, RandomInstancesMatchSortThenStride) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 64)(rng);
    const std::size_t d = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    if (d > n) continue;
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n / d)(rng);
    const DistanceMatrix dist = trial % 3 == 0 ? tied_distances(n, rng) : pairwise_sq_euclidean(random_normal({1, n, 2}, 1.0, rng));
    EXPECT_EQ(dilated_select(dist, k, d), oracle::select(flat(dist), nullptr, n, k, d));
  }
}

TEST(Schedule, SteppedDefaultsAndVariant) {
  EXPECT_EQ(DilationSchedule::stepped(12).rates, (std::vector<std::size_t>{1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3}));
  EXPECT_EQ(DilationSchedule::stepped(16, 2, 4, 5).rates.back(), 5u);
  EXPECT_EQ(DilationSchedule::stepped(16, 2, 4, 5).rates.front(), 2u);
  EXPECT_EQ(DilationSchedule::stepped(20).max_rate(), 4u);
  EXPECT_EQ(DilationSchedule::constant(3, 2).rates, (std::vector<std::size_t>{2, 2, 2}));
  EXPECT_THROW(DilationSchedule::stepped(4, 3, 1, 2), ConfigError);
}

TEST(BuildGraph, CompositionIdentities) {
  std::mt19937_64 rng(9);
  const Tensor v = random_normal({2, 16, 4}, 1.0, rng);
  const auto d = pairwise_sq_euclidean(v);
  EXPECT_EQ(build_graph(v, std::nullopt, {4, 1, false}), knn_adjacency(d, 4));
  const Tensor uniform = Tensor::full({2, 16, 16}, 1.0 / 16);
  EXPECT_EQ(build_graph(v, uniform, {4, 3, true}), dilated_select(d, 4, 3));
  EXPECT_THROW(build_graph(v, std::nullopt, {4, 1, true}), ConfigError);
}

TEST(BuildGraph, RandomConfigsMatchStepByStepPipeline) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(4, 30)(rng);
    const std::size_t dil = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n / dil)(rng);
    const Tensor v = random_normal({1, n, 3}, 1.0, rng);
    const Tensor alpha = random_alpha(1, n, rng);
    const auto fa = flat(alpha);
    const auto fd = flat(pairwise_sq_euclidean(v));
    EXPECT_EQ(build_graph(v, alpha, {k, dil, true}), oracle::select(fd, &fa, n, k, dil));
    EXPECT_EQ(build_graph(v, alpha, {k, dil, false}), oracle::select(fd, nullptr, n, k, dil));
  }
}

TEST(BuildGraph, PermutationEquivariance) {
  std::mt19937_64 rng(11);
  const std::size_t n = 20, k = 5;
  const Tensor v = random_normal({1, n, 3}, 1.0, rng);
  const auto perm = oracle::random_permutation(n, rng);  // new node p holds old node perm[p]
  Eigen::ArrayXd pv(v.values().size());
  for (std::size_t p = 0; p < n; ++p) pv.segment(p * 3, 3) = v.values().segment(perm[p] * 3, 3);
  std::vector<std::uint32_t> inverse(n);
  for (std::size_t p = 0; p < n; ++p) inverse[perm[p]] = static_cast<std::uint32_t>(p);
  for (std::size_t dil : {1u, 2u}) {
    const auto a = build_graph(v, std::nullopt, {k, dil, false});
    const auto b = build_graph(Tensor({1, n, 3}, pv), std::nullopt, {k, dil, false});
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t j = 0; j < k; ++j) EXPECT_EQ(b(0, p, j), inverse[a(0, perm[p], j)]);
  }
}

TEST(BuildGraph, InvariantToDistanceScaling) {
  std::mt19937_64 rng(12);
  const Tensor v = random_normal({1, 16, 3}, 1.0, rng);
  EXPECT_EQ(build_graph(v, std::nullopt, {6, 2, false}), build_graph(v * 4.0, std::nullopt, {6, 2, false}));
}

TEST(Adjacency, ValidityChecks) {
  AdjacencyIndex adj(1, 3, 2);
  adj.index = {0, 1, 1, 2, 2, 0};
  EXPECT_TRUE(is_valid_adjacency(adj));
  adj.index = {0, 0, 1, 2, 2, 0};
  EXPECT_FALSE(is_valid_adjacency(adj));
  adj.index = {1, 0, 1, 2, 2, 0};
  EXPECT_FALSE(is_valid_adjacency(adj));
  adj.index = {0, 3, 1, 2, 2, 0};
  EXPECT_FALSE(is_valid_adjacency(adj));
}
