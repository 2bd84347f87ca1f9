#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "lpie/error.hpp"

// Little-endian primitives shared by the LPT1 and LPCK readers/writers.
namespace lpie::byte_io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
U to_little(U v) {
  static_assert(std::is_unsigned_v<U>);
  if constexpr (std::endian::native == std::endian::big) {
    U r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r = static_cast<U>((r << 8) | ((v >> (8 * i)) & 0xff));
    return r;
  }
  return v;
}

template <typename U>
void put(std::ostream& os, U v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

inline void put_f32(std::ostream& os, float f) { put(os, std::bit_cast<std::uint32_t>(f)); }

template <typename U>
U get(std::istream& is, const char* what) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(U))) {
    throw FormatError(FormatError::Kind::truncated, std::string("truncated while reading ") + what);
  }
  return to_little(v);
}

inline float get_f32(std::istream& is, const char* what) { return std::bit_cast<float>(get<std::uint32_t>(is, what)); }

// Bytes left in a seekable stream, or UINT64_MAX when unknown.
std::uint64_t remaining(std::istream& is);

// Writes via `<path>.tmp` and renames so readers never see a partial file.
template <typename F>
void write_atomically(const std::filesystem::path& path, F&& body);

}  // namespace lpie::byte_io

#include <fstream>

namespace lpie::byte_io {

inline std::uint64_t remaining(std::istream& is) {
  const auto here = is.tellg();
  if (here < 0) return UINT64_MAX;
  is.seekg(0, std::ios::end);
  const auto end = is.tellg();
  is.seekg(here);
  if (end < here) return 0;
  return static_cast<std::uint64_t>(end - here);
}

template <typename F>
void write_atomically(const std::filesystem::path& path, F&& body) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError(FormatError::Kind::io, "cannot open '" + tmp.string() + "' for writing");
    body(os);
    os.flush();
    if (!os) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw FormatError(FormatError::Kind::io, "write failed for '" + path.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace lpie::byte_io
