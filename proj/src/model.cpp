#include "fvig/model.hpp"

#include "fvig/errors.hpp"
#include "fvig/graph.hpp"
#include "fvig/ops.hpp"

#include <cmath>

namespace fvig {

namespace {

Tensor apply_dropout(const Tensor& x, const ForwardMode& mode) {
  if (!mode.training || mode.dropout == 0.0) return x;
  if (!mode.rng) throw std::logic_error("training-mode dropout needs an RNG");
  return dropout(x, mode.dropout, true, *mode.rng);
}

}  // namespace

Linear Linear::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = random_uniform({in, out}, -bound, bound, rng, true);
  l.bias = random_uniform({out}, -bound, bound, rng, true);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return matmul(x, weight) + bias; }

NodeNorm NodeNorm::init(std::size_t dim) {
  return {Tensor::ones({dim}, true), Tensor::zeros({dim}, true)};
}

Tensor NodeNorm::operator()(const Tensor& x) const {
  return standardize_lastdim(x) * gain + shift;
}

Tensor patchify(const Tensor& images, std::size_t patch_size) {
  if (images.rank() != 4 || patch_size == 0 || images.dim(2) % patch_size != 0 ||
      images.dim(3) % patch_size != 0) {
    throw ShapeError("patchify: images " + shape_to_string(images.shape()) +
                     " not divisible into " + std::to_string(patch_size) + "-pixel patches");
  }
  const std::size_t bsz = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t p = patch_size, gy = h / p, gx = w / p, n = gy * gx, pd = c * p * p;
  // Source flat index of every output element.
  auto source = std::make_shared<std::vector<std::size_t>>(bsz * n * pd);
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t py = 0; py < gy; ++py) {
      for (std::size_t px = 0; px < gx; ++px) {
        const std::size_t node = py * gx + px;
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t dy = 0; dy < p; ++dy) {
            for (std::size_t dx = 0; dx < p; ++dx) {
              const std::size_t f = (ch * p + dy) * p + dx;
              (*source)[(b * n + node) * pd + f] =
                  ((b * c + ch) * h + py * p + dy) * w + px * p + dx;
            }
          }
        }
      }
    }
  }
  Eigen::ArrayXd out(static_cast<Eigen::Index>(source->size()));
  for (std::size_t i = 0; i < source->size(); ++i) out[i] = images.values()[(*source)[i]];
  return make_result("patchify", {bsz, n, pd}, std::move(out), {images},
                     [source](const Eigen::ArrayXd& g, std::span<const ImplPtr> in) {
                       Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(in[0]->values.size());
                       for (std::size_t i = 0; i < source->size(); ++i) gx[(*source)[i]] += g[i];
                       in[0]->accumulate_grad(gx);
                     });
}

Tensor patch_embed(const Tensor& images, const ModelConfig& config, const Linear& embed,
                   const std::optional<Tensor>& positional) {
  const Shape expect{images.rank() ? images.dim(0) : 0, config.channels, config.image_size,
                     config.image_size};
  if (images.shape() != expect) {
    throw ShapeError("patch_embed: expected images " + shape_to_string(expect) + ", got " +
                     shape_to_string(images.shape()));
  }
  Tensor nodes = embed(patchify(images, config.patch_size));
  if (positional) nodes = nodes + *positional;
  return nodes;
}

Tensor max_relative_aggregate(const Tensor& features, const AdjacencyIndex& adj) {
  const Tensor neighbors = gather_neighbors(features, adj);  // [B, N, K, D]
  const Tensor center = reshape(features, {features.dim(0), features.dim(1), 1, features.dim(2)});
  const Tensor relative = reduce(neighbors - center, 2, Reduction::Max);
  return concat_lastdim({features, relative});
}

Tensor grapher_block(const Tensor& features, const GrapherBlock& block, const ModelConfig& config,
                     std::size_t layer, const ForwardMode& mode, GraphTrace* trace) {
  Tensor h = block.norm(features);
  std::optional<Tensor> attention;
  if (config.use_channel_saliency) {
    if (!block.saliency) throw ConfigError("channel saliency enabled without parameters");
    attention = channel_saliency_forward(h, *block.saliency);
  }
  GraphConfig graph;
  graph.k = config.neighbors;
  graph.dilation = config.dilation_schedule().rates.at(layer);
  graph.use_saliency = config.use_channel_saliency;
  const AdjacencyIndex adj = build_graph(h, attention, graph);
  if (trace) {
    trace->adjacency.push_back(adj);
    trace->dilation.push_back(graph.dilation);
    trace->attention.push_back(attention ? attention->detach() : Tensor());
    trace->block_input.push_back(h.detach());
  }
  if (config.use_spatial_saliency) {
    if (!block.cluster) throw ConfigError("spatial saliency enabled without parameters");
    h = spatial_cluster_forward(h, adj, *block.cluster);
  }
  Tensor update = block.update(gelu(block.aggregate(max_relative_aggregate(h, adj))));
  return features + apply_dropout(update, mode);
}

Tensor baseline_vig_block(const Tensor& features, const NodeNorm& norm, const Linear& aggregate,
                          const Linear& update, std::size_t k, const ForwardMode& mode) {
  const Tensor h = norm(features);
  const AdjacencyIndex adj = knn_adjacency(pairwise_sq_euclidean(h), k);
  Tensor u = update(gelu(aggregate(max_relative_aggregate(h, adj))));
  return features + apply_dropout(u, mode);
}

Tensor ffn_block(const Tensor& features, const FfnBlock& block, const ForwardMode& mode) {
  Tensor u = block.project(gelu(block.expand(block.norm(features))));
  return features + apply_dropout(u, mode);
}

std::size_t ParamCensus::group(const std::string& name) const {
  for (const auto& [n, count] : groups) {
    if (n == name) return count;
  }
  return 0;
}

std::size_t ParamCensus::block_subtotal() const {
  return group("saliency") + group("cluster") + group("graph_conv") + group("ffn");
}

ParamCensus count_params(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.embed_dim, dl = config.latent_dim, l = config.depth;
  ParamCensus census;
  census.groups = {
      {"patch_embed", config.patch_dim() * d + d},
      {"positional", config.use_positional_embedding ? config.nodes() * d : 0},
      {"saliency", config.use_channel_saliency ? l * (d * dl + 2 * dl) : 0},
      {"cluster", config.use_spatial_saliency ? l * (2 * config.heads + 2 * d * dl) : 0},
      {"graph_conv", l * (2 * d + (2 * d * d + d) + (d * d + d))},
      {"ffn", l * (2 * d + (4 * d * d + 4 * d) + (4 * d * d + d))},
      {"head", d * config.num_classes + config.num_classes},
  };
  for (const auto& [name, count] : census.groups) census.total += count;
  return census;
}

FViGModel FViGModel::init(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  FViGModel m;
  m.config_ = config;
  const std::size_t d = config.embed_dim;
  m.embed = Linear::init(config.patch_dim(), d, rng);
  if (config.use_positional_embedding) {
    m.positional = random_normal({config.nodes(), d}, 0.02, rng, true);
  }
  for (std::size_t l = 0; l < config.depth; ++l) {
    GrapherBlock g;
    g.norm = NodeNorm::init(d);
    if (config.use_channel_saliency) g.saliency = SaliencyProjection::init(d, config.latent_dim, rng);
    if (config.use_spatial_saliency) {
      g.cluster = ClusterHeadParams::init(d, config.latent_dim, config.heads, rng);
      g.cluster->overlap = config.cluster_overlap;
    }
    g.aggregate = Linear::init(2 * d, d, rng);
    g.update = Linear::init(d, d, rng);
    if (g.saliency) g.saliency->leaky_slope = config.leaky_slope;
    m.graphers.push_back(std::move(g));

    FfnBlock f;
    f.norm = NodeNorm::init(d);
    f.expand = Linear::init(d, 4 * d, rng);
    f.project = Linear::init(4 * d, d, rng);
    m.ffns.push_back(std::move(f));
  }
  m.head = Linear::init(d, config.num_classes, rng);
  return m;
}

Tensor FViGModel::forward(const Tensor& images, bool training, std::mt19937_64* rng,
                          GraphTrace* trace) const {
  const ForwardMode mode{training, config_.dropout, rng};
  Tensor x = patch_embed(images, config_, embed, positional);
  for (std::size_t l = 0; l < config_.depth; ++l) {
    x = grapher_block(x, graphers[l], config_, l, mode, trace);
    x = ffn_block(x, ffns[l], mode);
  }
  return head(reduce(x, 1, Reduction::Mean));
}

std::vector<NamedTensor> FViGModel::named_parameters() const {
  std::vector<NamedTensor> out;
  auto add = [&out](std::string name, const Tensor& t) { out.push_back({std::move(name), t}); };
  auto add_linear = [&add](const std::string& prefix, const Linear& lin) {
    add(prefix + ".weight", lin.weight);
    add(prefix + ".bias", lin.bias);
  };
  auto add_norm = [&add](const std::string& prefix, const NodeNorm& n) {
    add(prefix + ".gain", n.gain);
    add(prefix + ".shift", n.shift);
  };
  add_linear("patch_embed", embed);
  if (positional) add("positional", *positional);
  for (std::size_t l = 0; l < graphers.size(); ++l) {
    const std::string g = "grapher." + std::to_string(l);
    const auto& blk = graphers[l];
    add_norm(g + ".norm", blk.norm);
    if (blk.saliency) {
      add(g + ".saliency.projection", blk.saliency->projection);
      add(g + ".saliency.self_score", blk.saliency->self_score);
      add(g + ".saliency.neighbor_score", blk.saliency->neighbor_score);
    }
    if (blk.cluster) {
      add(g + ".cluster.gate_scale", blk.cluster->gate_scale);
      add(g + ".cluster.gate_shift", blk.cluster->gate_shift);
      add(g + ".cluster.aggregate_proj", blk.cluster->aggregate_proj);
      add(g + ".cluster.dispatch_proj", blk.cluster->dispatch_proj);
    }
    add_linear(g + ".aggregate", blk.aggregate);
    add_linear(g + ".update", blk.update);
    const std::string f = "ffn." + std::to_string(l);
    add_norm(f + ".norm", ffns[l].norm);
    add_linear(f + ".expand", ffns[l].expand);
    add_linear(f + ".project", ffns[l].project);
  }
  add_linear("head", head);
  return out;
}

std::vector<Tensor> FViGModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

Checkpoint FViGModel::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.metadata = format_key_values(config_.to_key_values());
  for (auto& p : named_parameters()) ckpt.tensors.push_back({p.name, p.tensor.detach()});
  return ckpt;
}

FViGModel FViGModel::from_checkpoint(const Checkpoint& ckpt) {
  const ModelConfig config = ModelConfig::from_key_values(parse_key_values(ckpt.metadata));
  std::mt19937_64 unused(0);
  FViGModel m = init(config, unused);
  auto params = m.named_parameters();
  if (params.size() != ckpt.tensors.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                      " tensors, config expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& stored = ckpt.tensors[i];
    if (stored.name != params[i].name || stored.tensor.shape() != params[i].tensor.shape()) {
      throw ConfigError("checkpoint tensor '" + stored.name + "' " +
                        shape_to_string(stored.tensor.shape()) + " does not match expected '" +
                        params[i].name + "' " + shape_to_string(params[i].tensor.shape()));
    }
    params[i].tensor.mutable_values() = stored.tensor.values();
  }
  return m;
}

}  // namespace fvig
