#include "fvig/autodiff.hpp"
#include "fvig/errors.hpp"
#include "fvig/graph.hpp"
#include "fvig/model.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace fvig;

namespace {

ModelConfig flags_off(ModelConfig c) {
  c.use_channel_saliency = false;
  c.use_spatial_saliency = false;
  c.use_dilation = false;
  return c;
}

Tensor random_images(const ModelConfig& c, std::size_t b, std::mt19937_64& rng) {
  return random_uniform({b, c.channels, c.image_size, c.image_size}, 0.0, 1.0, rng);
}

// Rearranges whole patches of each image so that new patch q is old patch perm[q].
Tensor permute_patches(const Tensor& img, std::size_t p, const std::vector<std::size_t>& perm) {
  const std::size_t bsz = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3), gw = w / p;
  Eigen::ArrayXd out(img.values().size());
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t q = 0; q < perm.size(); ++q)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) {
            const std::size_t sy = perm[q] / gw * p + dy, sx = perm[q] % gw * p + dx;
            const std::size_t ty = q / gw * p + dy, tx = q % gw * p + dx;
            out[((b * c + ch) * h + ty) * w + tx] = img[((b * c + ch) * h + sy) * w + sx];
          }
  return Tensor(img.shape(), out);
}

void zero_linear(Linear& l) {
  l.weight.mutable_values().setZero();
  l.bias.mutable_values().setZero();
}

}  // namespace

TEST(Patchify, MatchesLoopOracle) {
  std::mt19937_64 rng(1);
  const Tensor img = random_normal({2, 3, 8, 12}, 1.0, rng);
  const Tensor p = patchify(img, 4);
  EXPECT_EQ(p.shape(), (Shape{2, 6, 48}));
  EXPECT_EQ(oracle::to_vec(p), oracle::patchify(img, 4));
  EXPECT_THROW(patchify(img, 5), ShapeError);
}

TEST(Patchify, NodeCountForDefaultGrid) {
  ModelConfig c = ModelConfig::micro();
  EXPECT_EQ(c.nodes(), 16u);
  std::mt19937_64 rng(2);
  EXPECT_EQ(patchify(random_images(c, 1, rng), c.patch_size).dim(1), 16u);
}

TEST(PatchEmbed, ZeroImageGivesBiasPlusPositional) {
  std::mt19937_64 rng(3);
  const ModelConfig c = ModelConfig::micro();
  const FViGModel m = FViGModel::init(c, rng);
  const Tensor out = patch_embed(Tensor::zeros({1, 3, 32, 32}), c, m.embed, m.positional);
  for (std::size_t n = 0; n < 16; ++n)
    for (std::size_t d = 0; d < 32; ++d)
      EXPECT_EQ(out[n * 32 + d], m.embed.bias[d] + (*m.positional)[n * 32 + d]);
  EXPECT_THROW(patch_embed(Tensor::zeros({1, 3, 16, 16}), c, m.embed, m.positional), ShapeError);
}

TEST(MaxRelative, HandExamples) {
  const Tensor x = Tensor::from({1, 3, 1}, {1, 4, 2});
  AdjacencyIndex adj(1, 3, 2);
  adj.index = {0, 1, 1, 2, 2, 0};
  const Tensor a = max_relative_aggregate(x, adj);
  EXPECT_EQ(a.shape(), (Shape{1, 3, 2}));
  // Node 0: max(0, 3) = 3. Node 1: max(0, -2) = 0. Node 2: max(0, -1) = 0.
  EXPECT_EQ(oracle::to_vec(a), (std::vector<double>{1, 3, 4, 0, 2, 0}));
}

TEST(MaxRelative, SelfOnlyNeighbourhoodGivesZeros) {
  std::mt19937_64 rng(4);
  const Tensor x = random_normal({1, 4, 3}, 1.0, rng);
  const Tensor a = max_relative_aggregate(x, knn_adjacency(pairwise_sq_euclidean(x), 1));
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(a[n * 6 + c], x[n * 3 + c]);
      EXPECT_EQ(a[n * 6 + 3 + c], 0.0);
    }
}

TEST(Blocks, OutputShapesPreserved) {
  std::mt19937_64 rng(5);
  const ModelConfig c = ModelConfig::micro();
  const FViGModel m = FViGModel::init(c, rng);
  const Tensor x = random_normal({2, 16, 32}, 1.0, rng);
  EXPECT_EQ(grapher_block(x, m.graphers[0], c, 0, {}).shape(), x.shape());
  EXPECT_EQ(ffn_block(x, m.ffns[0], {}).shape(), x.shape());
}

TEST(Blocks, ZeroFfnIsIdentity) {
  std::mt19937_64 rng(6);
  const ModelConfig c = ModelConfig::micro();
  FViGModel m = FViGModel::init(c, rng);
  zero_linear(m.ffns[0].project);
  const Tensor x = random_normal({1, 16, 32}, 1.0, rng);
  EXPECT_TRUE((ffn_block(x, m.ffns[0], {}).values() == x.values()).all());
}

TEST(Blocks, FlagsOffEqualsBaselineBitForBit) {
  std::mt19937_64 rng(7);
  const ModelConfig c = flags_off(ModelConfig::micro());
  const FViGModel m = FViGModel::init(c, rng);
  const Tensor x = random_normal({2, 16, 32}, 1.0, rng);
  for (std::size_t l = 0; l < c.depth; ++l) {
    const auto& g = m.graphers[l];
    const Tensor a = grapher_block(x, g, c, l, {});
    const Tensor b = baseline_vig_block(x, g.norm, g.aggregate, g.update, c.neighbors, {});
    EXPECT_TRUE((a.values() == b.values()).all()) << "layer " << l;
  }
}

TEST(Blocks, TraceRecordsScheduleAndValidGraphs) {
  std::mt19937_64 rng(8);
  ModelConfig c = ModelConfig::micro();
  c.depth = 6;
  c.neighbors = 3;
  c.dilation_step = 2;
  const FViGModel m = FViGModel::init(c, rng);
  GraphTrace trace;
  m.forward(random_images(c, 2, rng), false, nullptr, &trace);
  ASSERT_EQ(trace.adjacency.size(), 6u);
  EXPECT_EQ(trace.dilation, (std::vector<std::size_t>{1, 1, 2, 2, 3, 3}));
  for (std::size_t l = 0; l < 6; ++l) {
    EXPECT_TRUE(is_valid_adjacency(trace.adjacency[l]));
    EXPECT_EQ(trace.adjacency[l], build_graph(trace.block_input[l], trace.attention[l],
                                              {c.neighbors, trace.dilation[l], true}));
  }
}

TEST(Census, MatchesNamedParameterCount) {
  std::mt19937_64 rng(9);
  for (ModelConfig c : {ModelConfig::micro(), flags_off(ModelConfig::micro()), ModelConfig{}}) {
    const FViGModel m = FViGModel::init(c, rng);
    std::size_t total = 0;
    for (const auto& p : m.named_parameters()) total += p.tensor.numel();
    EXPECT_EQ(count_params(c).total, total);
    std::size_t stored = 0;
    for (const auto& t : m.to_checkpoint().tensors) stored += t.tensor.numel();
    EXPECT_EQ(stored, total);
  }
}

TEST(Census, DoublingDepthDoublesBlockSubtotal) {
  ModelConfig c = ModelConfig::micro();
  const auto a = count_params(c);
  c.depth *= 2;
  const auto b = count_params(c);
  EXPECT_EQ(b.block_subtotal(), 2 * a.block_subtotal());
  EXPECT_EQ(b.total - b.block_subtotal(), a.total - a.block_subtotal());
}

TEST(Census, FlagsOffDropsSaliencyAndClusterParams) {
  const auto on = count_params(ModelConfig::micro());
  const auto off = count_params(flags_off(ModelConfig::micro()));
  EXPECT_GT(on.group("saliency"), 0u);
  EXPECT_GT(on.group("cluster"), 0u);
  EXPECT_EQ(off.group("saliency"), 0u);
  EXPECT_EQ(off.group("cluster"), 0u);
  EXPECT_EQ(on.total - off.total, on.group("saliency") + on.group("cluster"));
}

TEST(Forward, LogitShapeUsesDefaultClassCount) {
  std::mt19937_64 rng(10);
  const ModelConfig c = ModelConfig::micro();
  const FViGModel m = FViGModel::init(c, rng);
  EXPECT_EQ(m.forward(random_images(c, 3, rng)).shape(), (Shape{3, 9}));
}

TEST(Forward, PatchPermutationInvariantWithoutPositional) {
  std::mt19937_64 rng(11);
  ModelConfig c = ModelConfig::micro();
  c.use_positional_embedding = false;
  const FViGModel m = FViGModel::init(c, rng);
  const Tensor img = random_images(c, 2, rng);
  const auto perm = oracle::random_permutation(c.nodes(), rng);
  const Tensor a = m.forward(img), b = m.forward(permute_patches(img, c.patch_size, perm));
  EXPECT_LE((a.values() - b.values()).abs().maxCoeff(), 1e-6);
}

TEST(Forward, ZeroedBlocksReduceToEmbedPoolHead) {
  std::mt19937_64 rng(12);
  const ModelConfig c = ModelConfig::micro();
  FViGModel m = FViGModel::init(c, rng);
  for (auto& g : m.graphers) zero_linear(g.update);
  for (auto& f : m.ffns) zero_linear(f.project);
  const Tensor img = random_images(c, 2, rng);
  const Tensor pooled = reduce(patch_embed(img, c, m.embed, m.positional), 1, Reduction::Mean);
  const Tensor want = m.head(pooled);
  EXPECT_LE((m.forward(img).values() - want.values()).abs().maxCoeff(), 1e-12);
}

TEST(Forward, EvalIsDeterministicTrainingDropoutUsesRng) {
  std::mt19937_64 rng(13);
  const ModelConfig c = ModelConfig::micro();
  const FViGModel m = FViGModel::init(c, rng);
  const Tensor img = random_images(c, 2, rng);
  EXPECT_TRUE((m.forward(img).values() == m.forward(img).values()).all());
  std::mt19937_64 r1(5), r2(5);
  EXPECT_TRUE((m.forward(img, true, &r1).values() == m.forward(img, true, &r2).values()).all());
  EXPECT_FALSE((m.forward(img, true, &r1).values() == m.forward(img).values()).all());
}

TEST(Forward, GradientReachesEveryValuePathParameter) {
  // Saliency attention only decides which neighbours are selected, so its
  // parameters sit behind a non-differentiable choice and get no gradient.
  std::mt19937_64 rng(14);
  const ModelConfig c = ModelConfig::micro();
  const FViGModel m = FViGModel::init(c, rng);
  backward(sum_all(m.forward(random_images(c, 2, rng)) * random_normal({2, 9}, 1.0, rng)));
  for (const auto& p : m.named_parameters()) {
    if (p.name.find(".saliency.") != std::string::npos) {
      EXPECT_FALSE(p.tensor.has_grad()) << p.name;
      continue;
    }
    ASSERT_TRUE(p.tensor.has_grad()) << p.name;
    EXPECT_GT(p.tensor.grad().abs().maxCoeff(), 0.0) << p.name;
  }
}

TEST(Checkpoint, RoundTripGivesIdenticalLogits) {
  std::mt19937_64 rng(15);
  ModelConfig c = ModelConfig::micro();
  c.cluster_overlap = ScatterMode::Sum;
  const FViGModel m = FViGModel::init(c, rng);
  std::stringstream buf;
  write_checkpoint(buf, m.to_checkpoint());
  const FViGModel back = FViGModel::from_checkpoint(read_checkpoint(buf));
  EXPECT_EQ(back.config(), c);
  const Tensor img = random_images(c, 2, rng);
  EXPECT_TRUE((m.forward(img).values() == back.forward(img).values()).all());
}

TEST(Checkpoint, MismatchedTensorsRejected) {
  std::mt19937_64 rng(16);
  const FViGModel m = FViGModel::init(ModelConfig::micro(), rng);
  Checkpoint ckpt = m.to_checkpoint();
  ckpt.tensors.pop_back();
  EXPECT_THROW(FViGModel::from_checkpoint(ckpt), ConfigError);
  ckpt = m.to_checkpoint();
  ckpt.tensors[0].name = "renamed";
  EXPECT_THROW(FViGModel::from_checkpoint(ckpt), ConfigError);
}
