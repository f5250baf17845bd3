#include "fvig/checkpoint.hpp"

#include "fvig/errors.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace fvig {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'V', 'I', 'G'};
constexpr std::uint32_t kMaxRank = 16;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

void put_f64(std::ostream& out, double x) {
  auto bits = std::bit_cast<std::uint64_t>(x);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b.data(), 8);
}

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  std::array<unsigned char, 4> b{};
  read_exact(in, reinterpret_cast<char*>(b.data()), 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  read_exact(in, reinterpret_cast<char*>(b.data()), 8, "tensor payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic.data(), 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  put_u32(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < t.values().size(); ++i) put_f64(out, t.values()[i]);
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  read_exact(in, magic.data(), 4, "magic");
  if (magic != kMagic) throw FormatError("not a checkpoint: bad magic bytes");
  const auto version = get_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get_u32(in, "tensor count");
  const auto meta_len = get_u32(in, "metadata length");
  Checkpoint ckpt;
  ckpt.metadata.resize(meta_len);
  read_exact(in, ckpt.metadata.data(), meta_len, "metadata");
  for (std::uint32_t n = 0; n < count; ++n) {
    NamedTensor rec;
    rec.name.resize(get_u32(in, "name length"));
    read_exact(in, rec.name.data(), rec.name.size(), "tensor name");
    const auto rank = get_u32(in, "rank");
    if (rank > kMaxRank) throw FormatError("checkpoint tensor '" + rec.name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(in, "dims");
    Eigen::ArrayXd values(static_cast<Eigen::Index>(shape_numel(shape)));
    for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = get_f64(in);
    rec.tensor = Tensor(std::move(shape), std::move(values));
    ckpt.tensors.push_back(std::move(rec));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, ckpt);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace fvig
