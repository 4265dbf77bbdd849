#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace redraw::img {

class ImageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Channel-last float image, values in [0,1]. channels is 3 (RGB) or 1.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;  // row-major, channel-last

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0);

  double& at(int y, int x, int c) { return values[(static_cast<size_t>(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return values[(static_cast<size_t>(y) * width + x) * channels + c]; }
  bool same_dims(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  size_t pixel_count() const { return static_cast<size_t>(height) * width; }
};

struct Mask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> values;  // strictly 0 or 1

  Mask() = default;
  Mask(int h, int w, uint8_t fill = 0);

  uint8_t& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
  bool same_dims(const Mask& o) const { return height == o.height && width == o.width; }
};

// Pixelwise select: a where m=1, b where m=0.
Image compose(const Image& a, const Image& b, const Mask& m);

Mask mask_union(const Mask& a, const Mask& b);
Mask mask_intersection(const Mask& a, const Mask& b);
Mask mask_complement(const Mask& m);
int64_t mask_area(const Mask& m);
bool masks_disjoint(const Mask& a, const Mask& b);

// Binary PPM (P6, maxval 255) for images and binary PGM (P5, only 0/255)
// for masks. Quantization: byte = round(v*255), v = byte/255. Headers carry
// no comments; any single whitespace separators are accepted on read.
void save_ppm(const std::string& path, const Image& image);
Image load_ppm(const std::string& path);
void save_pgm(const std::string& path, const Mask& mask);
Mask load_pgm(const std::string& path);

// Layout adapters between channel-last imaging data and the channel-first
// layout the tensor code uses.
std::vector<double> to_chw(const Image& image);
Image from_chw(const std::vector<double>& data, int height, int width, int channels);

}  // namespace redraw::img
