#pragma once

// Little-endian primitive encoding shared by the checkpoint and feature formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "iosda/errors.hpp"

namespace iosda::binio {

template <class U>
inline void put_uint(std::ostream& os, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, sizeof(U));
}

template <class U>
inline U get_uint(std::istream& is, const char* what) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U)))
    throw DataError(std::string("truncated input while reading ") + what);
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double d) { put_uint(os, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(get_uint<std::uint64_t>(is, what));
}
inline void put_f32(std::ostream& os, float f) { put_uint(os, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(get_uint<std::uint32_t>(is, what));
}

inline void put_magic(std::ostream& os, const char (&magic)[9]) { os.write(magic, 8); }

inline void expect_magic(std::istream& is, const char (&magic)[9], const std::string& path) {
  char buf[8];
  if (!is.read(buf, 8) || std::memcmp(buf, magic, 8) != 0)
    throw DataError(path + ": bad magic, expected " + std::string(magic, 8));
}

}  // namespace iosda::binio
