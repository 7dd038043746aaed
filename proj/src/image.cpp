#include "efuse/image.hpp"

#include <fstream>
#include <stdexcept>

#include "efuse/binary_io.hpp"

namespace efuse {

double mean_squared_error(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("mean_squared_error: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
  return a.pixels.empty() ? 0.0 : s / static_cast<double>(a.pixels.size());
}

void save_fimg(const Image& img, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  io::write_bytes(os, "FIMG");
  io::write_u32(os, static_cast<std::uint32_t>(img.height));
  io::write_u32(os, static_cast<std::uint32_t>(img.width));
  for (double v : img.pixels) io::write_f64(os, v);
  if (!os) throw std::runtime_error("write failed for " + path);
}

Image load_fimg(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image " + path);
  io::expect_magic(is, "FIMG", path);
  const std::uint32_t h = io::read_u32(is, "image height");
  const std::uint32_t w = io::read_u32(is, "image width");
  Image img(h, w);
  io::read_exact(is, img.pixels.data(), img.pixels.size() * sizeof(double), "image pixels");
  return img;
}

}  // namespace efuse
