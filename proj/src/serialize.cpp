#include "hopa/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace hopa {
namespace {

constexpr std::array<char, 4> kMagic{'H', 'O', 'T', '4'};

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

template <std::size_t N>
std::array<unsigned char, N> take(std::istream& in, const char* what) {
  std::array<unsigned char, N> b{};
  const auto offset = static_cast<long long>(in.tellg());
  in.read(reinterpret_cast<char*>(b.data()), N);
  if (in.gcount() != static_cast<std::streamsize>(N)) {
    throw FormatError(std::string("HOT4: truncated ") + what + " at byte offset " +
                      std::to_string(offset < 0 ? 0 : offset));
  }
  return b;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  const Shape& s = t.shape();
  put_u32(out, static_cast<std::uint32_t>(s.n));
  put_u32(out, static_cast<std::uint32_t>(s.c));
  put_u32(out, static_cast<std::uint32_t>(s.h));
  put_u32(out, static_cast<std::uint32_t>(s.w));
  for (double v : t.data()) put_f64(out, v);
}

Tensor read_tensor(std::istream& in) {
  const auto magic = take<4>(in, "magic");
  if (std::memcmp(magic.data(), kMagic.data(), 4) != 0) {
    throw FormatError("HOT4: bad magic bytes");
  }
  std::array<int, 4> dims{};
  for (int& d : dims) {
    const auto b = take<4>(in, "dimension");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    if (v > (1u << 30)) throw FormatError("HOT4: implausible dimension " + std::to_string(v));
    d = static_cast<int>(v);
  }
  const Shape shape{dims[0], dims[1], dims[2], dims[3]};
  std::vector<double> values(shape.numel());
  for (double& v : values) {
    const auto b = take<8>(in, "value");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
  return Tensor(shape, std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace hopa
