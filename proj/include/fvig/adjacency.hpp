#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fvig {

/// Per-node neighbour lists, shape [batch, nodes, k], row-major.
/// A valid index has every entry in [0, nodes), the node itself at position 0
/// of its own row, and no duplicates within a row.
struct AdjacencyIndex {
  std::size_t batch = 0;
  std::size_t nodes = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> index;

  AdjacencyIndex() = default;
  AdjacencyIndex(std::size_t batch_, std::size_t nodes_, std::size_t k_)
      : batch(batch_), nodes(nodes_), k(k_), index(batch_ * nodes_ * k_, 0) {}

  std::uint32_t operator()(std::size_t b, std::size_t i, std::size_t j) const {
    return index[(b * nodes + i) * k + j];
  }
  std::uint32_t& operator()(std::size_t b, std::size_t i, std::size_t j) {
    return index[(b * nodes + i) * k + j];
  }
  std::span<const std::uint32_t> row(std::size_t b, std::size_t i) const {
    return {index.data() + (b * nodes + i) * k, k};
  }

  friend bool operator==(const AdjacencyIndex&, const AdjacencyIndex&) = default;
};

}  // namespace fvig
