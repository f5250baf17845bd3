#pragma once

#include "fvig/graph.hpp"
#include "fvig/ops.hpp"

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fvig {

/// Ordered key=value pairs; later entries override earlier ones.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Parses newline-separated `key=value` lines. Blank lines and lines starting
/// with '#' are skipped; whitespace around keys and values is trimmed.
KeyValues parse_key_values(std::string_view text);
std::string format_key_values(const KeyValues& kv);
/// Splits a single "key=value" override.
std::pair<std::string, std::string> split_assignment(std::string_view text);

std::size_t parse_size(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);

/// Architecture of an isotropic FViG: constant width D and node count N
/// across all blocks.
struct ModelConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t embed_dim = 48;   // D
  std::size_t latent_dim = 48;  // D'
  std::size_t depth = 12;
  std::size_t neighbors = 12;  // K
  std::size_t heads = 4;       // M
  std::size_t dilation_base = 1;
  std::size_t dilation_step = 4;
  std::size_t dilation_max = 4;
  double leaky_slope = 0.2;
  double dropout = 0.1;
  std::size_t num_classes = 9;
  bool use_channel_saliency = true;
  bool use_spatial_saliency = true;
  bool use_dilation = true;
  bool use_positional_embedding = true;
  ScatterMode cluster_overlap = ScatterMode::Mean;

  /// D=32, depth 2, 32x32 images in 8x8 patches (N=16), K=4, M=4.
  static ModelConfig micro();

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t nodes() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  DilationSchedule dilation_schedule() const;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  /// Returns false when `key` is not a model setting.
  bool set(const std::string& key, const std::string& value);
  KeyValues to_key_values() const;
  static ModelConfig from_key_values(const KeyValues& kv);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace fvig
