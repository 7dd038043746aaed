#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace efuse::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
inline void write_bytes(std::ostream& os, const std::string& s) { os.write(s.data(), static_cast<std::streamsize>(s.size())); }

inline void read_exact(std::istream& is, void* dst, std::size_t n, const char* what) {
  is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) throw FormatError(std::string("truncated file while reading ") + what);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v;
  read_exact(is, &v, 4, what);
  return v;
}

inline double read_f64(std::istream& is, const char* what) {
  double v;
  read_exact(is, &v, 8, what);
  return v;
}

inline void expect_magic(std::istream& is, const std::string& magic, const std::string& path) {
  std::string got(magic.size(), '\0');
  is.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (static_cast<std::size_t>(is.gcount()) != magic.size() || got != magic) {
    throw FormatError("bad magic in " + path + " (expected \"" + magic + "\")");
  }
}

}  // namespace efuse::io
