#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "ltfr/error.hpp"

// Little-endian primitive I/O for the LTFR container formats.
namespace ltfr::binio {

inline void write_u8(std::ostream& os, uint8_t v) { os.put(static_cast<char>(v)); }

inline void write_u32(std::ostream& os, uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, 4);
}

inline void write_f32(std::ostream& os, float v) {
  static_assert(sizeof(float) == 4);
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline void write_f64(std::ostream& os, double v) {
  static_assert(sizeof(double) == 8);
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(buf, 8);
}

inline uint8_t read_u8(std::istream& is, const char* what) {
  int c = is.get();
  if (c == EOF) throw IoError(std::string("truncated file reading ") + what);
  return static_cast<uint8_t>(c);
}

inline uint32_t read_u32(std::istream& is, const char* what) {
  char buf[4];
  if (!is.read(buf, 4)) throw IoError(std::string("truncated file reading ") + what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[i])) << (8 * i);
  return v;
}

inline float read_f32(std::istream& is, const char* what) {
  uint32_t bits = read_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline double read_f64(std::istream& is, const char* what) {
  char buf[8];
  if (!is.read(buf, 8)) throw IoError(std::string("truncated file reading ") + what);
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(static_cast<uint8_t>(buf[i])) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace ltfr::binio
