#pragma once

// Little-endian helpers shared by the EPSL, SBNN and IDX readers/writers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "shiftbnn/error.hpp"

namespace shiftbnn::io {

template <typename T>
T byteswap_if_big(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put_le(std::ostream& os, T v) {
  v = byteswap_if_big(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, std::string_view what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw Error(ErrorCode::TruncatedFile, std::string(what));
  return byteswap_if_big(v);
}

inline std::uint32_t get_be32(std::istream& is, std::string_view what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw Error(ErrorCode::TruncatedFile, std::string(what));
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())))
    throw Error(ErrorCode::TruncatedFile, "missing magic");
  if (got != magic) throw Error(ErrorCode::BadMagic, "expected " + std::string(magic));
}

}  // namespace shiftbnn::io
