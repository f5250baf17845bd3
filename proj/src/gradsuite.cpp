#include "fvig/gradsuite.hpp"

#include "fvig/cluster.hpp"
#include "fvig/errors.hpp"
#include "fvig/graph.hpp"
#include "fvig/model.hpp"
#include "fvig/ops.hpp"
#include "fvig/saliency.hpp"
#include "fvig/train.hpp"

#include <algorithm>
#include <functional>
#include <utility>

namespace fvig {

namespace {

using UnaryFn = std::function<Tensor(const Tensor&)>;

struct SuiteContext {
  std::mt19937_64 rng;
  double tol;
};

GradCheckReport worst_of(GradCheckReport a, const GradCheckReport& b) {
  const std::size_t checked = a.checked + b.checked;
  if (b.max_rel_error > a.max_rel_error) a = b;
  a.checked = checked;
  return a;
}

// Weighted sum so every output element contributes with its own coefficient.
UnaryFn weighted(UnaryFn f, const Shape& out_shape, std::mt19937_64& rng) {
  const Tensor w = random_normal(out_shape, 1.0, rng);
  return [f = std::move(f), w](const Tensor& x) { return sum_all(f(x) * w); };
}

Shape output_shape(const UnaryFn& f, const Tensor& x) {
  NoGradGuard no_grad;
  return f(x).shape();
}

GradCheckReport check_unary(SuiteContext& ctx, const UnaryFn& f, const Tensor& x) {
  return grad_check(weighted(f, output_shape(f, x), ctx.rng), x, 1e-6, ctx.tol);
}

// Checks d/da and d/db of a binary op separately and keeps the worst.
GradCheckReport check_binary(SuiteContext& ctx, const std::function<Tensor(const Tensor&, const Tensor&)>& f,
                             const Tensor& a, const Tensor& b) {
  const auto ra = check_unary(ctx, [&](const Tensor& x) { return f(x, b); }, a);
  const auto rb = check_unary(ctx, [&](const Tensor& x) { return f(a, x); }, b);
  return worst_of(ra, rb);
}

// Loss closure over already-wired parameters; every listed element is probed.
GradCheckReport check_params(SuiteContext& ctx, const std::function<Tensor()>& output,
                             const std::vector<std::pair<std::string, Tensor>>& params,
                             std::size_t per_tensor_limit = 0) {
  Shape shape;
  {
    NoGradGuard no_grad;
    shape = output().shape();
  }
  const Tensor w = random_normal(shape, 1.0, ctx.rng);
  std::vector<ParamProbe> probes;
  for (const auto& [name, t] : params) {
    const std::size_t n = t.numel();
    if (per_tensor_limit == 0 || n <= per_tensor_limit) {
      for (std::size_t i = 0; i < n; ++i) probes.push_back({name, t, i});
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t i = 0; i < per_tensor_limit; ++i) probes.push_back({name, t, pick(ctx.rng)});
    }
  }
  return grad_check_params([&] { return sum_all(output() * w); }, probes, 1e-6, ctx.tol);
}

Tensor randn(const Shape& shape, SuiteContext& ctx, double stddev = 1.0) {
  return random_normal(shape, stddev, ctx.rng);
}

// Small batch of random node features with a KNN graph built from them.
struct GraphFixture {
  Tensor features;
  AdjacencyIndex adj;
};

GraphFixture graph_fixture(SuiteContext& ctx, std::size_t b, std::size_t n, std::size_t d, std::size_t k) {
  GraphFixture f{randn({b, n, d}, ctx), {}};
  f.adj = knn_adjacency(pairwise_sq_euclidean(f.features), k);
  return f;
}

using CheckFn = std::function<GradCheckReport(SuiteContext&)>;

std::vector<std::pair<std::string, CheckFn>> suite() {
  std::vector<std::pair<std::string, CheckFn>> s;
  s.emplace_back("matmul", [](SuiteContext& c) {
    return worst_of(check_binary(c, matmul, randn({2, 3, 4}, c), randn({4, 5}, c)),
                    check_binary(c, matmul, randn({2, 3, 4}, c), randn({2, 4, 3}, c)));
  });
  s.emplace_back("transpose", [](SuiteContext& c) { return check_unary(c, transpose_last2, randn({2, 3, 4}, c)); });
  s.emplace_back("add", [](SuiteContext& c) { return check_binary(c, broadcast_add, randn({2, 3, 4}, c), randn({3, 1}, c)); });
  s.emplace_back("sub", [](SuiteContext& c) { return check_binary(c, broadcast_sub, randn({2, 1, 4}, c), randn({3, 4}, c)); });
  s.emplace_back("mul", [](SuiteContext& c) { return check_binary(c, broadcast_mul, randn({2, 3, 4}, c), randn({4}, c)); });
  s.emplace_back("div", [](SuiteContext& c) {
    Tensor denom = randn({3, 1}, c);
    denom.mutable_values() = denom.values().sign() * (denom.values().abs() + 0.5);
    return check_binary(c, broadcast_div, randn({2, 3, 4}, c), denom);
  });
  s.emplace_back("scale", [](SuiteContext& c) {
    return check_unary(c, [](const Tensor& x) { return add_scalar(scale(x, -1.7), 0.3); }, randn({3, 4}, c));
  });
  s.emplace_back("leaky_relu", [](SuiteContext& c) {
    return check_unary(c, [](const Tensor& x) { return leaky_relu(x, 0.2); }, randn({4, 5}, c));
  });
  s.emplace_back("sigmoid", [](SuiteContext& c) { return check_unary(c, sigmoid, randn({4, 5}, c, 2.0)); });
  s.emplace_back("gelu", [](SuiteContext& c) { return check_unary(c, gelu, randn({4, 5}, c, 2.0)); });
  s.emplace_back("softmax", [](SuiteContext& c) { return check_unary(c, softmax_lastdim, randn({2, 3, 6}, c, 2.0)); });
  s.emplace_back("cosine_similarity", [](SuiteContext& c) {
    return check_binary(c, [](const Tensor& a, const Tensor& b) { return cosine_similarity(a, b); },
                        randn({2, 3, 5}, c), randn({3, 5}, c));
  });
  s.emplace_back("reduce", [](SuiteContext& c) {
    GradCheckReport r;
    for (auto kind : {Reduction::Mean, Reduction::Max, Reduction::Sum}) {
      for (int axis : {0, 1, -1}) {
        r = worst_of(r, check_unary(c, [=](const Tensor& x) { return reduce(x, axis, kind); }, randn({3, 4, 5}, c)));
      }
    }
    r = worst_of(r, check_unary(c, sum_all, randn({3, 4}, c)));
    return worst_of(r, check_unary(c, mean_all, randn({3, 4}, c)));
  });
  s.emplace_back("concat", [](SuiteContext& c) {
    return check_binary(c, [](const Tensor& a, const Tensor& b) { return concat_lastdim({a, b, a}); },
                        randn({2, 3, 2}, c), randn({2, 3, 4}, c));
  });
  s.emplace_back("slice", [](SuiteContext& c) {
    return check_unary(c, [](const Tensor& x) { return slice_lastdim(x, 1, 4); }, randn({2, 3, 5}, c));
  });
  s.emplace_back("reshape", [](SuiteContext& c) {
    return check_unary(c, [](const Tensor& x) { return reshape(x, {3, 8}); }, randn({2, 3, 4}, c));
  });
  s.emplace_back("standardize", [](SuiteContext& c) { return check_unary(c, [](const Tensor& x) { return standardize_lastdim(x); }, randn({2, 3, 6}, c)); });
  s.emplace_back("gather", [](SuiteContext& c) {
    const auto g = graph_fixture(c, 2, 6, 3, 3);
    return check_unary(c, [adj = g.adj](const Tensor& x) { return gather_neighbors(x, adj); }, g.features);
  });
  s.emplace_back("scatter", [](SuiteContext& c) {
    const auto g = graph_fixture(c, 2, 6, 3, 3);
    const Tensor msgs = randn({2, 6, 3, 4}, c);
    auto r = check_unary(c, [adj = g.adj](const Tensor& x) { return scatter_neighbors(x, adj, ScatterMode::Mean); }, msgs);
    return worst_of(r, check_unary(c, [adj = g.adj](const Tensor& x) { return scatter_neighbors(x, adj, ScatterMode::Sum); }, msgs));
  });
  s.emplace_back("dropout", [](SuiteContext& c) {
    // Same mask on every evaluation: the generator is re-seeded per call.
    return check_unary(c, [](const Tensor& x) {
      std::mt19937_64 mask_rng(99);
      return dropout(x, 0.3, true, mask_rng);
    }, randn({4, 6}, c));
  });
  s.emplace_back("cross_entropy", [](SuiteContext& c) {
    const std::vector<std::size_t> labels{0, 2, 1, 2};
    return check_unary(c, [labels](const Tensor& x) { return cross_entropy(x, labels); }, randn({4, 3}, c, 2.0));
  });
  s.emplace_back("channel_saliency", [](SuiteContext& c) {
    const Tensor v = randn({2, 5, 4}, c);
    auto p = SaliencyProjection::init(4, 3, c.rng);
    auto r = check_params(c, [&] { return channel_saliency_forward(v, p); },
                          {{"projection", p.projection}, {"self_score", p.self_score}, {"neighbor_score", p.neighbor_score}});
    return worst_of(r, check_unary(c, [&](const Tensor& x) { return channel_saliency_forward(x, p); }, v));
  });
  s.emplace_back("cluster_aggregate", [](SuiteContext& c) {
    const Tensor members = randn({2, 3, 4, 5}, c);
    const Tensor gates = sigmoid(randn({2, 3, 4}, c));
    const Tensor center = randn({2, 3, 5}, c);
    auto r = check_unary(c, [&](const Tensor& x) { return aggregate_single(x, members, gates).feature; }, center);
    r = worst_of(r, check_unary(c, [&](const Tensor& x) { return aggregate_single(center, x, gates).feature; }, members));
    return worst_of(r, check_unary(c, [&](const Tensor& x) { return aggregate_single(center, members, x).feature; }, gates));
  });
  s.emplace_back("spatial_cluster", [](SuiteContext& c) {
    const auto g = graph_fixture(c, 2, 6, 8, 3);
    auto p = ClusterHeadParams::init(8, 4, 2, c.rng);
    p.gate_scale.mutable_values() << 1.3, 0.7;
    p.gate_shift.mutable_values() << -0.4, 0.5;
    auto r = check_params(c, [&] { return spatial_cluster_forward(g.features, g.adj, p); },
                          {{"gate_scale", p.gate_scale}, {"gate_shift", p.gate_shift},
                           {"aggregate_proj", p.aggregate_proj}, {"dispatch_proj", p.dispatch_proj}});
    return worst_of(r, check_unary(c, [&](const Tensor& x) { return spatial_cluster_forward(x, g.adj, p); }, g.features));
  });
  s.emplace_back("max_relative", [](SuiteContext& c) {
    const auto g = graph_fixture(c, 2, 6, 3, 3);
    return check_unary(c, [adj = g.adj](const Tensor& x) { return max_relative_aggregate(x, adj); }, g.features);
  });
  s.emplace_back("grapher_block", [](SuiteContext& c) {
    auto cfg = ModelConfig::micro();
    const auto model = FViGModel::init(cfg, c.rng);
    const Tensor x = randn({2, cfg.nodes(), cfg.embed_dim}, c);
    const ForwardMode eval;
    std::vector<std::pair<std::string, Tensor>> params;
    for (const auto& [name, t] : model.named_parameters()) {
      if (name.rfind("grapher.1.", 0) == 0) params.emplace_back(name, t);
    }
    auto r = check_params(c, [&] { return grapher_block(x, model.graphers[1], cfg, 1, eval); }, params, 24);
    return worst_of(r, check_unary(c, [&](const Tensor& in) { return grapher_block(in, model.graphers[1], cfg, 1, eval); }, x));
  });
  s.emplace_back("ffn_block", [](SuiteContext& c) {
    const std::size_t d = 6;
    FfnBlock f{NodeNorm::init(d), Linear::init(d, 4 * d, c.rng), Linear::init(4 * d, d, c.rng)};
    f.norm.gain.mutable_values() = random_normal({d}, 1.0, c.rng).values();
    const Tensor x = randn({2, 4, d}, c);
    const ForwardMode eval;
    auto r = check_params(c, [&] { return ffn_block(x, f, eval); },
                          {{"norm.gain", f.norm.gain}, {"norm.shift", f.norm.shift}, {"expand.weight", f.expand.weight},
                           {"expand.bias", f.expand.bias}, {"project.weight", f.project.weight}, {"project.bias", f.project.bias}});
    return worst_of(r, check_unary(c, [&](const Tensor& in) { return ffn_block(in, f, eval); }, x));
  });
  s.emplace_back("micro_model", [](SuiteContext& c) {
    auto cfg = ModelConfig::micro();
    cfg.num_classes = 3;
    const auto model = FViGModel::init(cfg, c.rng);
    Tensor images = random_uniform({2, 3, cfg.image_size, cfg.image_size}, 0.0, 1.0, c.rng);
    const std::vector<std::size_t> labels{0, 2};
    std::vector<std::pair<std::string, Tensor>> params;
    for (const auto& [name, t] : model.named_parameters()) params.emplace_back(name, t);
    std::vector<ParamProbe> probes;
    for (const auto& [name, t] : params) {
      std::uniform_int_distribution<std::size_t> pick(0, t.numel() - 1);
      for (int i = 0; i < 4; ++i) probes.push_back({name, t, pick(c.rng)});
    }
    return grad_check_params([&] { return cross_entropy(model.forward(images), labels); }, probes, 1e-6, c.tol);
  });
  return s;
}

}  // namespace

std::vector<std::string> grad_suite_ops() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : suite()) names.push_back(name);
  return names;
}

std::vector<OpCheckResult> run_grad_suite(double tol, std::uint64_t seed, const std::string& only) {
  const auto checks = suite();
  if (!only.empty() && std::none_of(checks.begin(), checks.end(), [&](const auto& c) { return c.first == only; })) {
    throw ConfigError("unknown gradcheck op '" + only + "'");
  }
  std::vector<OpCheckResult> results;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const auto& [name, fn] = checks[i];
    if (!only.empty() && name != only) continue;
    // Each op gets its own stream so filtering does not change its inputs.
    std::seed_seq seq{seed, static_cast<std::uint64_t>(i)};
    SuiteContext ctx{std::mt19937_64(seq), tol};
    auto report = fn(ctx);
    report.passed = report.max_rel_error <= tol;
    results.push_back({name, std::move(report)});
  }
  return results;
}

}  // namespace fvig
