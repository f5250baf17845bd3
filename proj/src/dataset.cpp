#include "fvig/dataset.hpp"

#include "fvig/errors.hpp"
#include "fvig/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <random>

namespace fs = std::filesystem;

namespace fvig {

namespace {

bool is_ppm(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".ppm" || ext == ".pnm";
}

}  // namespace

std::vector<std::size_t> DatasetSplit::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (const auto& item : items) ++counts.at(item.label);
  return counts;
}

DatasetSplit load_dataset(const fs::path& root, std::size_t image_size) {
  if (!fs::is_directory(root)) throw DatasetError("dataset root " + root.string() + " is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().front() != '.') {
      class_dirs.push_back(entry.path());
    }
  }
  std::sort(class_dirs.begin(), class_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  if (class_dirs.empty()) throw DatasetError("dataset root " + root.string() + " has no class directories");

  DatasetSplit split;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    split.class_names.push_back(class_dirs[label].filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label])) {
      if (entry.is_regular_file() && is_ppm(entry.path())) files.push_back(entry.path());
    }
    if (files.empty()) throw DatasetError("class directory " + class_dirs[label].string() + " has no images");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      split.items.push_back({resize_bilinear(read_ppm(f), image_size, image_size), label, f.string()});
    }
  }
  return split;
}

DatasetSplit synth_dataset(std::uint64_t seed, std::size_t num_classes, std::size_t per_class,
                           std::size_t image_size) {
  if (num_classes < 2) throw ConfigError("synth_dataset needs at least 2 classes");
  if (image_size == 0) throw ConfigError("synth_dataset needs a positive image size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.03);
  const double two_pi = 2.0 * std::numbers::pi;
  const auto size = static_cast<double>(image_size);

  DatasetSplit split;
  for (std::size_t c = 0; c < num_classes; ++c) split.class_names.push_back("class_" + std::to_string(c));

  for (std::size_t c = 0; c < num_classes; ++c) {
    const double t = static_cast<double>(c) / static_cast<double>(num_classes);
    const double frac = static_cast<double>(c) / static_cast<double>(num_classes - 1);
    const double color[3] = {0.5 + 0.4 * std::cos(two_pi * t), 0.5 + 0.4 * std::cos(two_pi * t + two_pi / 3.0),
                             0.5 + 0.4 * std::cos(two_pi * t + 2.0 * two_pi / 3.0)};
    const std::size_t blobs = 1 + 2 * c;
    const double sigma = size * (0.28 - 0.16 * frac);
    const double frequency = 1.0 + 2.0 * static_cast<double>(c);

    for (std::size_t n = 0; n < per_class; ++n) {
      std::vector<double> cx(blobs), cy(blobs), amp(blobs);
      for (std::size_t k = 0; k < blobs; ++k) {
        cx[k] = unit(rng) * size;
        cy[k] = unit(rng) * size;
        amp[k] = 0.6 + 0.4 * unit(rng);
      }
      const double theta = unit(rng) * std::numbers::pi;
      const double phase = unit(rng) * two_pi;

      Eigen::ArrayXd px(static_cast<Eigen::Index>(3 * image_size * image_size));
      for (std::size_t y = 0; y < image_size; ++y) {
        for (std::size_t x = 0; x < image_size; ++x) {
          double density = 0.0;
          for (std::size_t k = 0; k < blobs; ++k) {
            const double dx = static_cast<double>(x) - cx[k];
            const double dy = static_cast<double>(y) - cy[k];
            density += amp[k] * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
          }
          density = std::min(density, 1.0);
          const double u = (static_cast<double>(x) * std::cos(theta) + static_cast<double>(y) * std::sin(theta)) / size;
          const double stripes = 0.1 * std::sin(two_pi * frequency * u + phase);
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const double v = 0.15 + density * color[ch] * 0.8 + stripes + noise(rng);
            px[static_cast<Eigen::Index>((ch * image_size + y) * image_size + x)] = std::clamp(v, 0.0, 1.0);
          }
        }
      }
      split.items.push_back({Tensor({3, image_size, image_size}, std::move(px)), c,
                             "synth:" + std::to_string(seed) + ":" + std::to_string(c) + ":" + std::to_string(n)});
    }
  }
  return split;
}

Tensor stack_images(const DatasetSplit& split, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("stack_images: empty batch");
  const Shape& s = split.items.at(indices[0]).image.shape();
  const std::size_t per = shape_numel(s);
  Eigen::ArrayXd out(static_cast<Eigen::Index>(per * indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& img = split.items.at(indices[i]).image;
    if (img.shape() != s) throw ShapeError("stack_images: mixed image sizes in batch");
    out.segment(static_cast<Eigen::Index>(i * per), static_cast<Eigen::Index>(per)) = img.values();
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  return Tensor(std::move(shape), std::move(out));
}

}  // namespace fvig
