#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace babylm::io {

// Little-endian binary primitives. Host is assumed little-endian capable;
// values are serialized byte-by-byte so the format is host-independent.

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, uint64_t v) {
  write_u32(os, static_cast<uint32_t>(v & 0xffffffffu));
  write_u32(os, static_cast<uint32_t>(v >> 32));
}

inline void write_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline void write_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

inline uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t read_u64(std::istream& is) {
  uint64_t lo = read_u32(is);
  uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

inline float read_f32(std::istream& is) {
  uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline double read_f64(std::istream& is) {
  uint64_t bits = read_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void write_f32_array(std::ostream& os, const float* p, size_t n) {
  for (size_t i = 0; i < n; ++i) write_f32(os, p[i]);
}

inline void read_f32_array(std::istream& is, float* p, size_t n) {
  for (size_t i = 0; i < n; ++i) p[i] = read_f32(is);
}

// Writes `content` to `path` via a temporary file plus rename, so readers
// never observe a torn file.
void write_file_atomic(const std::string& path, const std::string& content);
void write_file_atomic_binary(const std::string& path, const void* data, size_t n);

std::string read_file(const std::string& path);

// Returns true if `bytes` is valid UTF-8; otherwise sets `bad_offset` to the
// first offending byte position.
bool validate_utf8(std::string_view bytes, size_t* bad_offset);

// Decodes one code point starting at `i`; advances `i`. Input must be valid.
uint32_t utf8_next(std::string_view s, size_t& i);

// Appends the UTF-8 encoding of `cp` to `out`.
void utf8_append(std::string& out, uint32_t cp);

}  // namespace babylm::io
