#pragma once

#include "fvig/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fvig {

struct DataItem {
  Tensor image;  // [3, H, W], values in [0, 1]
  std::size_t label = 0;
  std::string source;  // file path or synthetic id
};

struct DatasetSplit {
  std::vector<DataItem> items;
  std::vector<std::string> class_names;  // sorted; label i names class_names[i]

  std::size_t size() const { return items.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  std::vector<std::size_t> class_counts() const;
};

/// Reads root/<class>/<file>.ppm. Classes are labelled in lexicographic
/// order of their directory names; files within a class are read in
/// lexicographic order and resized to image_size x image_size.
/// Throws FormatError naming the file for undecodable images and
/// DatasetError for a missing root or a class without images.
DatasetSplit load_dataset(const std::filesystem::path& root, std::size_t image_size);

/// Deterministic blurred-blob textures. Classes differ in colour palette,
/// blob count and size, and stripe frequency.
DatasetSplit synth_dataset(std::uint64_t seed, std::size_t num_classes, std::size_t per_class,
                           std::size_t image_size);

/// Stacks the listed items into [B, 3, H, W].
Tensor stack_images(const DatasetSplit& split, std::span<const std::size_t> indices);

}  // namespace fvig
