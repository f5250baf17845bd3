#include "fvig/config.hpp"

#include "fvig/errors.hpp"

#include <charconv>
#include <cstdlib>
#include <sstream>

namespace fvig {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues kv;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (line.find('=') == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
    }
    kv.push_back(split_assignment(line));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::pair<std::string, std::string> split_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("expected key=value, got '" + std::string(text) + "'");
  }
  std::string key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + std::string(text) + "'");
  return {std::move(key), trim(text.substr(eq + 1))};
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t out = 0;
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double out = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size()) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.embed_dim = 32;
  c.latent_dim = 32;
  c.depth = 2;
  c.neighbors = 4;
  c.heads = 4;
  return c;
}

DilationSchedule ModelConfig::dilation_schedule() const {
  if (!use_dilation) return DilationSchedule::constant(depth, 1);
  return DilationSchedule::stepped(depth, dilation_base, dilation_step, dilation_max);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
  if (patch_size == 0 || image_size == 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) fail("image_size must be divisible by patch_size");
  if (channels != 3) fail("channels must be 3");
  if (embed_dim == 0 || latent_dim == 0) fail("embed_dim and latent_dim must be positive");
  if (depth == 0) fail("depth must be at least 1");
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (heads == 0 || embed_dim % heads != 0 || latent_dim % heads != 0) {
    fail("heads must divide embed_dim and latent_dim");
  }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) fail("leaky_slope must be in (0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (dilation_base == 0 || dilation_step == 0 || dilation_max < dilation_base) {
    fail("dilation needs base >= 1, step >= 1, max >= base");
  }
  const std::size_t max_rate = dilation_schedule().max_rate();
  if (neighbors == 0 || neighbors * max_rate > nodes()) {
    fail("neighbors * max dilation (" + std::to_string(neighbors) + " * " +
         std::to_string(max_rate) + ") exceeds node count " + std::to_string(nodes()));
  }
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "image_size") image_size = parse_size(key, value);
  else if (key == "patch_size") patch_size = parse_size(key, value);
  else if (key == "channels") channels = parse_size(key, value);
  else if (key == "embed_dim") embed_dim = parse_size(key, value);
  else if (key == "latent_dim") latent_dim = parse_size(key, value);
  else if (key == "depth") depth = parse_size(key, value);
  else if (key == "neighbors") neighbors = parse_size(key, value);
  else if (key == "heads") heads = parse_size(key, value);
  else if (key == "dilation_base") dilation_base = parse_size(key, value);
  else if (key == "dilation_step") dilation_step = parse_size(key, value);
  else if (key == "dilation_max") dilation_max = parse_size(key, value);
  else if (key == "leaky_slope") leaky_slope = parse_double(key, value);
  else if (key == "dropout") dropout = parse_double(key, value);
  else if (key == "num_classes") num_classes = parse_size(key, value);
  else if (key == "use_channel_saliency") use_channel_saliency = parse_bool(key, value);
  else if (key == "use_spatial_saliency") use_spatial_saliency = parse_bool(key, value);
  else if (key == "use_dilation") use_dilation = parse_bool(key, value);
  else if (key == "use_positional_embedding") use_positional_embedding = parse_bool(key, value);
  else if (key == "cluster_overlap") {
    if (value == "mean") cluster_overlap = ScatterMode::Mean;
    else if (value == "sum") cluster_overlap = ScatterMode::Sum;
    else throw ConfigError("cluster_overlap: expected mean or sum, got '" + value + "'");
  } else {
    return false;
  }
  return true;
}

KeyValues ModelConfig::to_key_values() const {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"image_size", std::to_string(image_size)},
      {"patch_size", std::to_string(patch_size)},
      {"channels", std::to_string(channels)},
      {"embed_dim", std::to_string(embed_dim)},
      {"latent_dim", std::to_string(latent_dim)},
      {"depth", std::to_string(depth)},
      {"neighbors", std::to_string(neighbors)},
      {"heads", std::to_string(heads)},
      {"dilation_base", std::to_string(dilation_base)},
      {"dilation_step", std::to_string(dilation_step)},
      {"dilation_max", std::to_string(dilation_max)},
      {"leaky_slope", format_double(leaky_slope)},
      {"dropout", format_double(dropout)},
      {"num_classes", std::to_string(num_classes)},
      {"use_channel_saliency", b(use_channel_saliency)},
      {"use_spatial_saliency", b(use_spatial_saliency)},
      {"use_dilation", b(use_dilation)},
      {"use_positional_embedding", b(use_positional_embedding)},
      {"cluster_overlap", cluster_overlap == ScatterMode::Mean ? "mean" : "sum"},
  };
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) {
    if (!c.set(k, v)) throw ConfigError("unknown model setting '" + k + "'");
  }
  return c;
}

}  // namespace fvig
