#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "redraw/image.hpp"
#include "redraw/rng.hpp"

using namespace redraw;
using namespace redraw::img;

namespace {

namespace fs = std::filesystem;

std::string tmp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

Image random_image(int h, int w, int c, Rng& rng) {
  Image im(h, w, c);
  for (auto& v : im.values) v = rng.uniform();
  return im;
}

Mask random_mask(int h, int w, Rng& rng, double p = 0.5) {
  Mask m(h, w);
  for (auto& v : m.values) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

std::vector<uint8_t> file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("compose selects a under the mask and b elsewhere") {
  Rng rng(5);
  Image a = random_image(6, 7, 3, rng);
  Image b = random_image(6, 7, 3, rng);

  Mask ones(6, 7, 1), zeros(6, 7, 0);
  CHECK(compose(a, b, ones).values == a.values);
  CHECK(compose(a, b, zeros).values == b.values);

  // white/black split, checked pixel by pixel
  Image white(4, 4, 3, 1.0), black(4, 4, 3, 0.0);
  Mask left(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 2; ++x) left.at(y, x) = 1;
  Image split = compose(white, black, left);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) CHECK(split.at(y, x, c) == (x < 2 ? 1.0 : 0.0));
}

TEST_CASE("compose partition and idempotence properties") {
  Rng rng(6);
  Image a = random_image(8, 5, 3, rng);
  Image b = random_image(8, 5, 3, rng);
  Mask m = random_mask(8, 5, rng);

  Image ab = compose(a, b, m);
  Image ba = compose(b, a, m);
  for (size_t i = 0; i < a.values.size(); ++i) {
    CHECK(ab.values[i] + ba.values[i] == a.values[i] + b.values[i]);
  }
  CHECK(compose(ab, b, m).values == ab.values);
}

TEST_CASE("compose rejects mismatched dimensions") {
  Image a(4, 4, 3), b(4, 5, 3);
  Mask m(4, 4);
  CHECK_THROWS_AS(compose(a, b, m), ImageError);
}

TEST_CASE("mask algebra follows set semantics") {
  Rng rng(9);
  Mask m = random_mask(4, 4, rng);
  Mask co = mask_complement(m);

  CHECK(mask_area(mask_union(m, co)) == 16);
  CHECK(mask_area(mask_intersection(m, co)) == 0);
  CHECK(masks_disjoint(m, co));
  CHECK(mask_area(m) + mask_area(co) == 16);

  Mask left(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 2; ++x) left.at(y, x) = 1;
  CHECK(mask_area(left) == 8);
}

TEST_CASE("ppm codec round-trips quantized images bit-exactly") {
  Rng rng(12);
  auto path = tmp_path("redraw_test.ppm");
  Image im = random_image(9, 5, 3, rng);
  save_ppm(path, im);
  Image back = load_ppm(path);
  // After one quantization cycle the image is a fixed point of the codec.
  save_ppm(path, back);
  Image again = load_ppm(path);
  CHECK(back.values == again.values);
  CHECK(back.height == 9);
  CHECK(back.width == 5);
  fs::remove(path);
}

TEST_CASE("all-zero 2x2 image writes a 12 byte zero payload") {
  auto path = tmp_path("redraw_zero.ppm");
  save_ppm(path, Image(2, 2, 3, 0.0));
  auto bytes = file_bytes(path);
  std::string header = "P6\n2 2\n255\n";
  REQUIRE(bytes.size() == header.size() + 12);
  CHECK(std::equal(header.begin(), header.end(), bytes.begin()));
  for (size_t i = header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == 0);
  fs::remove(path);
}

TEST_CASE("pgm codec round-trips masks and rejects gray values") {
  Rng rng(13);
  auto path = tmp_path("redraw_test.pgm");
  Mask m = random_mask(7, 3, rng);
  save_pgm(path, m);
  CHECK(load_pgm(path).values == m.values);

  // Patch one payload byte to 37: must refuse to load.
  auto bytes = file_bytes(path);
  bytes[bytes.size() - 1] = 37;
  std::ofstream(path, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(load_pgm(path), ImageError);
  fs::remove(path);
}

TEST_CASE("codec rejects malformed and truncated files") {
  auto path = tmp_path("redraw_bad.ppm");
  {
    std::ofstream os(path, std::ios::binary);
    os << "P6\n2 2\n255\nab";  // payload should be 12 bytes
  }
  CHECK_THROWS_AS(load_ppm(path), ImageError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "P3\n2 2\n255\n";
  }
  CHECK_THROWS_AS(load_ppm(path), ImageError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "P6\n# hi\n2 2\n255\n";
  }
  CHECK_THROWS_AS(load_ppm(path), ImageError);
  fs::remove(path);
}

TEST_CASE("quantization uses round, not truncation") {
  auto path = tmp_path("redraw_round.ppm");
  Image im(1, 1, 3);
  im.values = {0.5, 0.998, 0.001};  // 127.5 -> 128, 254.49 -> 254, 0.255 -> 0
  save_ppm(path, im);
  Image back = load_ppm(path);
  CHECK(back.values[0] == 128.0 / 255.0);
  CHECK(back.values[1] == 254.0 / 255.0);
  CHECK(back.values[2] == 0.0);
  fs::remove(path);
}

TEST_CASE("chw adapters invert each other and reorder correctly") {
  Rng rng(15);
  Image im = random_image(3, 4, 3, rng);
  auto chw = to_chw(im);
  // channel plane 0 is the red channel in row-major order
  CHECK(chw[0] == im.at(0, 0, 0));
  CHECK(chw[1] == im.at(0, 1, 0));
  CHECK(chw[12] == im.at(0, 0, 1));
  Image back = from_chw(chw, 3, 4, 3);
  CHECK(back.values == im.values);
}
