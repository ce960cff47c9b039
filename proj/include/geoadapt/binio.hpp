#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

namespace geoadapt::binio {

// Little-endian primitives used by the cloud and checkpoint file formats.

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 4);
}

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

inline void write_f32_le(std::ostream& os, float v) {
  write_u32_le(os, std::bit_cast<std::uint32_t>(v));
}

// Returns false on short read.
inline bool read_exact(std::istream& is, char* buf, std::size_t n) {
  is.read(buf, static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(is.gcount()) == n;
}

inline bool read_u32_le(std::istream& is, std::uint32_t& v) {
  unsigned char buf[4];
  if (!read_exact(is, reinterpret_cast<char*>(buf), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return true;
}

inline bool read_u64_le(std::istream& is, std::uint64_t& v) {
  unsigned char buf[8];
  if (!read_exact(is, reinterpret_cast<char*>(buf), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return true;
}

inline bool read_f32_le(std::istream& is, float& v) {
  std::uint32_t bits = 0;
  if (!read_u32_le(is, bits)) return false;
  v = std::bit_cast<float>(bits);
  return true;
}

}  // namespace geoadapt::binio
