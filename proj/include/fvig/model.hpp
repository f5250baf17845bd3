#pragma once

#include "fvig/adjacency.hpp"
#include "fvig/checkpoint.hpp"
#include "fvig/cluster.hpp"
#include "fvig/config.hpp"
#include "fvig/saliency.hpp"
#include "fvig/tensor.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fvig {

/// y = x * weight + bias, weight [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const;
};

/// Per-node standardisation over channels followed by a learned affine map.
struct NodeNorm {
  Tensor gain;
  Tensor shift;

  static NodeNorm init(std::size_t dim);
  Tensor operator()(const Tensor& x) const;
};

struct GrapherBlock {
  NodeNorm norm;
  std::optional<SaliencyProjection> saliency;
  std::optional<ClusterHeadParams> cluster;
  Linear aggregate;  // W_agg, [2D, D]
  Linear update;     // W_update, [D, D]
};

struct FfnBlock {
  NodeNorm norm;
  Linear expand;   // [D, 4D]
  Linear project;  // [4D, D]
};

/// Dropout context for one forward pass; `rng` may be null in evaluation.
struct ForwardMode {
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
};

/// Graph structures captured during a forward pass, one entry per block.
struct GraphTrace {
  std::vector<AdjacencyIndex> adjacency;
  std::vector<std::size_t> dilation;
  std::vector<Tensor> attention;  // undefined when channel saliency is off
  std::vector<Tensor> block_input;
};

/// Image batch [B, C, H, W] -> non-overlapping patches [B, N, patch*patch*C],
/// nodes in row-major grid order, each patch flattened channel-major.
Tensor patchify(const Tensor& images, std::size_t patch_size);

/// Patch flattening, linear map to D, optional additive positional embedding.
Tensor patch_embed(const Tensor& images, const ModelConfig& config, const Linear& embed,
                   const std::optional<Tensor>& positional);

/// A_i = concat(v_i, max over j in N(i) of (v_j - v_i)), [B, N, 2D].
Tensor max_relative_aggregate(const Tensor& features, const AdjacencyIndex& adj);

/// One graph-reasoning block with residual connection; see GrapherBlock.
Tensor grapher_block(const Tensor& features, const GrapherBlock& block, const ModelConfig& config,
                     std::size_t layer, const ForwardMode& mode, GraphTrace* trace = nullptr);

/// Plain KNN + max-relative graph convolution block with no saliency or
/// clustering path at all. Reference for the flags-off configuration.
Tensor baseline_vig_block(const Tensor& features, const NodeNorm& norm, const Linear& aggregate,
                          const Linear& update, std::size_t k, const ForwardMode& mode);

Tensor ffn_block(const Tensor& features, const FfnBlock& block, const ForwardMode& mode);

struct ParamCensus {
  std::vector<std::pair<std::string, std::size_t>> groups;
  std::size_t total = 0;

  std::size_t group(const std::string& name) const;
  /// Grapher + FFN parameters across all blocks.
  std::size_t block_subtotal() const;
};

ParamCensus count_params(const ModelConfig& config);

class FViGModel {
 public:
  static FViGModel init(const ModelConfig& config, std::mt19937_64& rng);

  const ModelConfig& config() const { return config_; }

  /// logits [B, num_classes]. Training mode applies dropout and needs `rng`.
  Tensor forward(const Tensor& images, bool training = false, std::mt19937_64* rng = nullptr,
                 GraphTrace* trace = nullptr) const;

  /// Every trainable tensor with a stable dotted name, in a fixed order.
  std::vector<NamedTensor> named_parameters() const;
  std::vector<Tensor> parameters() const;

  Checkpoint to_checkpoint() const;
  /// Throws ConfigError when the stored tensors do not match the stored config.
  static FViGModel from_checkpoint(const Checkpoint& ckpt);

  Linear embed;
  std::optional<Tensor> positional;
  std::vector<GrapherBlock> graphers;
  std::vector<FfnBlock> ffns;
  Linear head;

 private:
  ModelConfig config_;
};

}  // namespace fvig
