#include "fvig/graph.hpp"

#include "fvig/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fvig {

namespace {

void check_k(std::size_t k, std::size_t d, std::size_t n) {
  if (d == 0) throw RangeError("dilation rate must be at least 1");
  if (k == 0 || k * d > n) {
    throw RangeError("k=" + std::to_string(k) + " with dilation " + std::to_string(d) +
                     " needs 1 <= k*d <= N=" + std::to_string(n));
  }
}

// Fills one adjacency row from a per-candidate ranking key.
template <class Key>
void select_row(std::size_t self, std::size_t n, std::size_t k, std::size_t d, Key key,
                std::uint32_t* out, std::vector<std::uint32_t>& scratch) {
  scratch.clear();
  for (std::size_t j = 0; j < n; ++j) {
    if (j != self) scratch.push_back(static_cast<std::uint32_t>(j));
  }
  const std::size_t take = k * d - 1;
  auto less = [&key](std::uint32_t a, std::uint32_t b) {
    const double ka = key(a), kb = key(b);
    return ka < kb || (ka == kb && a < b);
  };
  std::partial_sort(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(take),
                    scratch.end(), less);
  out[0] = static_cast<std::uint32_t>(self);
  for (std::size_t p = 1; p < k; ++p) out[p] = scratch[p * d - 1];
}

AdjacencyIndex select(const DistanceMatrix& dist, const Tensor* alpha, std::size_t k, std::size_t d) {
  const std::size_t bsz = dist.batch(), n = dist.nodes();
  check_k(k, d, n);
  if (alpha) {
    const Shape expect{bsz, n, n};
    if (alpha->shape() != expect) {
      throw ShapeError("saliency attention " + shape_to_string(alpha->shape()) +
                       " does not match distances " + shape_to_string(expect));
    }
    const auto& a = alpha->values();
    for (std::size_t r = 0; r < bsz * n; ++r) {
      const double s = a.segment(r * n, n).sum();
      if (std::abs(s - 1.0) > 1e-6) {
        throw RangeError("saliency attention row " + std::to_string(r) + " sums to " + std::to_string(s));
      }
    }
  }
  AdjacencyIndex adj(bsz, n, k);
  std::vector<std::uint32_t> scratch;
  scratch.reserve(n);
  for (std::size_t b = 0; b < bsz; ++b) {
    const Eigen::MatrixXd& m = dist[b];
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t* row = adj.index.data() + (b * n + i) * k;
      if (alpha) {
        const double* a = alpha->values().data() + (b * n + i) * n;
        select_row(i, n, k, d, [&](std::uint32_t j) { return a[j] * m(i, j); }, row, scratch);
      } else {
        select_row(i, n, k, d, [&](std::uint32_t j) { return m(i, j); }, row, scratch);
      }
    }
  }
  return adj;
}

}  // namespace

DilationSchedule DilationSchedule::stepped(std::size_t depth, std::size_t base, std::size_t step,
                                           std::size_t max_rate) {
  if (base == 0 || step == 0 || max_rate < base) {
    throw ConfigError("dilation schedule needs base >= 1, step >= 1, max >= base");
  }
  DilationSchedule s;
  for (std::size_t l = 0; l < depth; ++l) s.rates.push_back(std::min(max_rate, base + l / step));
  return s;
}

DilationSchedule DilationSchedule::constant(std::size_t depth, std::size_t rate) {
  return {std::vector<std::size_t>(depth, rate)};
}

std::size_t DilationSchedule::max_rate() const {
  return rates.empty() ? 1 : *std::max_element(rates.begin(), rates.end());
}

DistanceMatrix pairwise_sq_euclidean(const Tensor& features) {
  if (features.rank() != 3 || features.dim(1) == 0) {
    throw ShapeError("pairwise_sq_euclidean expects [B, N, D] with N >= 1, got " +
                     shape_to_string(features.shape()));
  }
  const std::size_t bsz = features.dim(0), n = features.dim(1), d = features.dim(2);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  DistanceMatrix out;
  out.batches.reserve(bsz);
  for (std::size_t b = 0; b < bsz; ++b) {
    Eigen::Map<const RowMat> v(features.values().data() + b * n * d, n, d);
    Eigen::MatrixXd m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      m(i, i) = 0.0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double s = (v.row(i) - v.row(j)).squaredNorm();
        m(i, j) = s;
        m(j, i) = s;
      }
    }
    out.batches.push_back(std::move(m));
  }
  return out;
}

AdjacencyIndex knn_adjacency(const DistanceMatrix& dist, std::size_t k) {
  return select(dist, nullptr, k, 1);
}

AdjacencyIndex saliency_adjacency(const Tensor& alpha, const DistanceMatrix& dist, std::size_t k) {
  return select(dist, &alpha, k, 1);
}

AdjacencyIndex dilated_select(const DistanceMatrix& dist, std::size_t k, std::size_t d) {
  return select(dist, nullptr, k, d);
}

AdjacencyIndex build_graph(const Tensor& features, const std::optional<Tensor>& alpha,
                           const GraphConfig& config) {
  const DistanceMatrix dist = pairwise_sq_euclidean(features);
  if (config.use_saliency) {
    if (!alpha) throw ConfigError("build_graph: saliency requested without attention");
    return select(dist, &*alpha, config.k, config.dilation);
  }
  return select(dist, nullptr, config.k, config.dilation);
}

bool is_valid_adjacency(const AdjacencyIndex& adj) {
  if (adj.index.size() != adj.batch * adj.nodes * adj.k) return false;
  std::vector<char> seen(adj.nodes);
  for (std::size_t b = 0; b < adj.batch; ++b) {
    for (std::size_t i = 0; i < adj.nodes; ++i) {
      auto row = adj.row(b, i);
      if (adj.k == 0 || row[0] != i) return false;
      std::fill(seen.begin(), seen.end(), 0);
      for (auto j : row) {
        if (j >= adj.nodes || seen[j]) return false;
        seen[j] = 1;
      }
    }
  }
  return true;
}

}  // namespace fvig
