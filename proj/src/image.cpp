#include "redraw/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

namespace redraw::img {

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c),
      values(static_cast<size_t>(h) * w * c, fill) {
  if (h <= 0 || w <= 0 || (c != 1 && c != 3)) {
    throw ImageError("bad image dimensions " + std::to_string(h) + "x" +
                     std::to_string(w) + "x" + std::to_string(c));
  }
}

Mask::Mask(int h, int w, uint8_t fill)
    : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {
  if (h <= 0 || w <= 0) throw ImageError("bad mask dimensions");
  if (fill > 1) throw ImageError("mask values must be 0 or 1");
}

Image compose(const Image& a, const Image& b, const Mask& m) {
  if (!a.same_dims(b) || a.height != m.height || a.width != m.width) {
    throw ImageError("compose: dimension mismatch");
  }
  Image out = a;
  size_t n = a.pixel_count();
  for (size_t p = 0; p < n; ++p) {
    if (m.values[p] == 0) {
      for (int c = 0; c < a.channels; ++c) {
        out.values[p * a.channels + c] = b.values[p * a.channels + c];
      }
    }
  }
  return out;
}

namespace {
void require_same(const Mask& a, const Mask& b) {
  if (!a.same_dims(b)) throw ImageError("mask dimension mismatch");
}
}  // namespace

Mask mask_union(const Mask& a, const Mask& b) {
  require_same(a, b);
  Mask out = a;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = a.values[i] | b.values[i];
  return out;
}

Mask mask_intersection(const Mask& a, const Mask& b) {
  require_same(a, b);
  Mask out = a;
  for (size_t i = 0; i < out.values.size(); ++i) out.values[i] = a.values[i] & b.values[i];
  return out;
}

Mask mask_complement(const Mask& m) {
  Mask out = m;
  for (auto& v : out.values) v = v ? 0 : 1;
  return out;
}

int64_t mask_area(const Mask& m) {
  int64_t n = 0;
  for (uint8_t v : m.values) n += v;
  return n;
}

bool masks_disjoint(const Mask& a, const Mask& b) {
  require_same(a, b);
  for (size_t i = 0; i < a.values.size(); ++i) {
    if (a.values[i] & b.values[i]) return false;
  }
  return true;
}

namespace {

uint8_t quantize(double v) {
  double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

// Reads one whitespace-delimited ASCII token (netpbm headers carry no
// comments in our files; a '#' is treated as malformed).
std::string next_token(std::istream& is, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF && std::isspace(ch)) {
  }
  if (ch == EOF) throw ImageError("truncated header in " + path);
  while (ch != EOF && !std::isspace(ch)) {
    if (ch == '#') throw ImageError("unexpected comment in " + path);
    tok.push_back(static_cast<char>(ch));
    ch = is.get();
  }
  return tok;
}

int parse_dim(const std::string& tok, const std::string& path) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
    throw ImageError("malformed header token '" + tok + "' in " + path);
  }
  long v = std::stol(tok);
  if (v <= 0 || v > 4096) throw ImageError("unsupported dimension " + tok + " in " + path);
  return static_cast<int>(v);
}

}  // namespace

void save_ppm(const std::string& path, const Image& image) {
  if (image.channels != 3) throw ImageError("save_ppm: image must be RGB");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ImageError("cannot open for writing: " + path);
  os << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(image.width) * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = quantize(image.at(y, x, c));
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!os) throw ImageError("failed writing " + path);
}

Image load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageError("cannot open: " + path);
  if (next_token(is, path) != "P6") throw ImageError("not a binary PPM: " + path);
  int w = parse_dim(next_token(is, path), path);
  int h = parse_dim(next_token(is, path), path);
  if (next_token(is, path) != "255") throw ImageError("unsupported maxval in " + path);
  // next_token consumed exactly one whitespace byte after maxval via its
  // trailing get(); payload starts here.
  Image out(h, w, 3);
  std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw ImageError("truncated pixel payload in " + path);
  }
  for (size_t i = 0; i < buf.size(); ++i) out.values[i] = buf[i] / 255.0;
  return out;
}

void save_pgm(const std::string& path, const Mask& mask) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ImageError("cannot open for writing: " + path);
  os << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<uint8_t> buf(mask.values.size());
  for (size_t i = 0; i < buf.size(); ++i) {
    if (mask.values[i] > 1) throw ImageError("mask holds a non-binary value");
    buf[i] = mask.values[i] ? 255 : 0;
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw ImageError("failed writing " + path);
}

Mask load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ImageError("cannot open: " + path);
  if (next_token(is, path) != "P5") throw ImageError("not a binary PGM: " + path);
  int w = parse_dim(next_token(is, path), path);
  int h = parse_dim(next_token(is, path), path);
  if (next_token(is, path) != "255") throw ImageError("unsupported maxval in " + path);
  Mask out(h, w);
  std::vector<uint8_t> buf(static_cast<size_t>(w) * h);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw ImageError("truncated pixel payload in " + path);
  }
  for (size_t i = 0; i < buf.size(); ++i) {
    if (buf[i] == 255) {
      out.values[i] = 1;
    } else if (buf[i] == 0) {
      out.values[i] = 0;
    } else {
      throw ImageError("mask file holds value " + std::to_string(buf[i]) +
                       ", only 0 and 255 are valid: " + path);
    }
  }
  return out;
}

std::vector<double> to_chw(const Image& image) {
  std::vector<double> out(image.values.size());
  size_t hw = image.pixel_count();
  for (size_t p = 0; p < hw; ++p) {
    for (int c = 0; c < image.channels; ++c) {
      out[static_cast<size_t>(c) * hw + p] = image.values[p * image.channels + c];
    }
  }
  return out;
}

Image from_chw(const std::vector<double>& data, int height, int width, int channels) {
  Image out(height, width, channels);
  size_t hw = out.pixel_count();
  if (data.size() != hw * channels) throw ImageError("from_chw: length mismatch");
  for (size_t p = 0; p < hw; ++p) {
    for (int c = 0; c < channels; ++c) {
      out.values[p * channels + c] = data[static_cast<size_t>(c) * hw + p];
    }
  }
  return out;
}

}  // namespace redraw::img
