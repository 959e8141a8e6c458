#pragma once

// Little-endian binary primitives shared by the bag and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace hiclass {

static_assert(std::endian::native == std::endian::little,
              "bag/checkpoint serialization assumes a little-endian host");

inline void write_raw(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw std::runtime_error("binary write failed");
}

inline void read_raw(std::istream& is, void* p, std::size_t n,
                     const std::string& what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw std::runtime_error("truncated read: " + what);
}

inline void write_u32(std::ostream& os, std::uint32_t v) { write_raw(os, &v, 4); }
inline void write_f32(std::ostream& os, float v) { write_raw(os, &v, 4); }
inline void write_f64(std::ostream& os, double v) { write_raw(os, &v, 8); }

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
  std::uint32_t v = 0;
  read_raw(is, &v, 4, what);
  return v;
}

inline float read_f32(std::istream& is, const std::string& what) {
  float v = 0;
  read_raw(is, &v, 4, what);
  return v;
}

inline double read_f64(std::istream& is, const std::string& what) {
  double v = 0;
  read_raw(is, &v, 8, what);
  return v;
}

// Fails if the stream still has bytes left; payload sizes are fixed by the
// header, so trailing bytes mean a corrupt file.
inline void expect_eof(std::istream& is, const std::string& what) {
  char c;
  is.read(&c, 1);
  if (is.gcount() != 0)
    throw std::runtime_error("trailing bytes after payload: " + what);
}

}  // namespace hiclass
