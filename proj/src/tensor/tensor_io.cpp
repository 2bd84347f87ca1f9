#include "lpie/tensor_io.hpp"

#include <array>
#include <fstream>
#include <limits>

#include "lpie/byte_io.hpp"

namespace lpie {

const char* to_string(FormatError::Kind kind) {
  switch (kind) {
    case FormatError::Kind::io: return "io";
    case FormatError::Kind::bad_magic: return "bad_magic";
    case FormatError::Kind::unsupported_version: return "unsupported_version";
    case FormatError::Kind::truncated: return "truncated";
    case FormatError::Kind::overflow: return "overflow";
    case FormatError::Kind::mismatch: return "mismatch";
    case FormatError::Kind::invalid: return "invalid";
  }
  return "unknown";
}

namespace {
constexpr std::array<char, 4> kMagic{'L', 'P', 'T', '1'};
}

void write_lpt1(std::ostream& os, const Tensor<float>& t) {
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError(FormatError::Kind::overflow, "LPT1: dimension exceeds u32");
    }
  }
  os.write(kMagic.data(), kMagic.size());
  for (std::size_t d : {s.n, s.c, s.h, s.w}) byte_io::put(os, static_cast<std::uint32_t>(d));
  for (float v : t.data()) byte_io::put_f32(os, v);
}

Tensor<float> read_lpt1(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (is.gcount() != 4) throw FormatError(FormatError::Kind::truncated, "LPT1: file shorter than magic");
  if (magic != kMagic) throw FormatError(FormatError::Kind::bad_magic, "LPT1: bad magic bytes");
  std::array<std::uint64_t, 4> dims{};
  for (auto& d : dims) d = byte_io::get<std::uint32_t>(is, "LPT1 dims");
  std::uint64_t count = 1;
  for (auto d : dims) {
    if (d != 0 && count > std::numeric_limits<std::uint64_t>::max() / 4 / d) {
      throw FormatError(FormatError::Kind::overflow, "LPT1: element count overflows");
    }
    count *= d;
  }
  const std::uint64_t left = byte_io::remaining(is);
  if (left != UINT64_MAX && left < count * 4) {
    throw FormatError(FormatError::Kind::truncated, "LPT1: payload shorter than declared dims");
  }
  Tensor<float> t(Shape{dims[0], dims[1], dims[2], dims[3]});
  for (auto& v : t.data()) v = byte_io::get_f32(is, "LPT1 payload");
  return t;
}

void save_lpt1(const std::filesystem::path& path, const Tensor<float>& t) {
  byte_io::write_atomically(path, [&](std::ostream& os) { write_lpt1(os, t); });
}

Tensor<float> load_lpt1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(FormatError::Kind::io, "cannot open '" + path.string() + "'");
  return read_lpt1(is);
}

}  // namespace lpie
