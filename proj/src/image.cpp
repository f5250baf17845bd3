#include "fvig/image.hpp"

#include "fvig/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace fvig {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw FormatError(std::string("PPM header: missing ") + what);
    }
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_++] - '0');
      if (v > 1'000'000) throw FormatError(std::string("PPM header: ") + what + " too large");
    }
    return v;
  }

  std::size_t& pos() { return pos_; }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Tensor decode_ppm(std::span<const unsigned char> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError("not a binary PPM (expected P6 magic)");
  }
  HeaderReader header(bytes.subspan(2));
  const std::size_t width = header.number("width");
  const std::size_t height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (width == 0 || height == 0) throw FormatError("PPM header: zero image size");
  if (maxval == 0 || maxval > 65535) throw FormatError("PPM header: maxval out of range");
  std::size_t pos = 2 + header.pos();
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError("PPM header: missing separator before raster");
  }
  ++pos;
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t need = width * height * 3 * sample_bytes;
  if (bytes.size() - pos < need) {
    throw FormatError("PPM raster truncated: need " + std::to_string(need) + " bytes, have " +
                      std::to_string(bytes.size() - pos));
  }
  Eigen::ArrayXd values(static_cast<Eigen::Index>(3 * height * width));
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t at = pos + ((y * width + x) * 3 + c) * sample_bytes;
        const std::size_t raw = sample_bytes == 1 ? bytes[at] : (std::size_t{bytes[at]} << 8) | bytes[at + 1];
        values[static_cast<Eigen::Index>((c * height + y) * width + x)] =
            static_cast<double>(std::min(raw, maxval)) * scale;
      }
    }
  }
  return Tensor({3, height, width}, std::move(values));
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_ppm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("encode_ppm: expected [3, H, W], got " + shape_to_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(header.size() + 3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = image.values()[static_cast<Eigen::Index>((c * h + y) * w + x)];
        out.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
      }
    }
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_ppm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3 || height == 0 || width == 0) {
    throw ShapeError("resize_bilinear: expected [C, H, W] and a positive target size");
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image.detach();
  Eigen::ArrayXd out(static_cast<Eigen::Index>(c * height * width));
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  auto src = [&](std::size_t ch, std::size_t y, std::size_t x) {
    return image.values()[static_cast<Eigen::Index>((ch * h + y) * w + x)];
  };
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = src(ch, y0, x0) * (1.0 - tx) + src(ch, y0, x1) * tx;
        const double bottom = src(ch, y1, x0) * (1.0 - tx) + src(ch, y1, x1) * tx;
        out[static_cast<Eigen::Index>((ch * height + y) * width + x)] = top * (1.0 - ty) + bottom * ty;
      }
    }
  }
  return Tensor({c, height, width}, std::move(out));
}

}  // namespace fvig
