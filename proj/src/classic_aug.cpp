#include "redraw/classic_aug.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace redraw::aug {

const std::vector<PolicyKind>& policy_registry() {
  static const std::vector<PolicyKind> order{
      PolicyKind::Standard,  PolicyKind::Basic,   PolicyKind::RandomErasing,
      PolicyKind::Cutout,    PolicyKind::CutMix,  PolicyKind::GridMask,
      PolicyKind::EraseRedraw,
  };
  return order;
}

const char* policy_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Standard: return "standard";
    case PolicyKind::Basic: return "basic";
    case PolicyKind::RandomErasing: return "random_erasing";
    case PolicyKind::Cutout: return "cutout";
    case PolicyKind::CutMix: return "cutmix";
    case PolicyKind::GridMask: return "gridmask";
    case PolicyKind::EraseRedraw: return "erase_redraw";
  }
  throw img::ImageError("bad policy kind");
}

PolicyKind policy_from_name(const std::string& name) {
  for (PolicyKind k : policy_registry()) {
    if (name == policy_name(k)) return k;
  }
  throw img::ImageError("unknown augmentation policy: " + name);
}

img::Image hflip(const img::Image& im) {
  img::Image out = im;
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < im.channels; ++c)
        out.at(y, x, c) = im.at(y, im.width - 1 - x, c);
  return out;
}

img::Mask hflip(const img::Mask& m) {
  img::Mask out = m;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) out.at(y, x) = m.at(y, m.width - 1 - x);
  return out;
}

namespace {

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

double sample_bilinear(const img::Image& im, double sy, double sx, int c) {
  // clamp-to-edge
  sy = std::clamp(sy, 0.0, static_cast<double>(im.height - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(im.width - 1));
  int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
  int y1 = std::min(y0 + 1, im.height - 1), x1 = std::min(x0 + 1, im.width - 1);
  double fy = sy - y0, fx = sx - x0;
  double top = im.at(y0, x0, c) * (1 - fx) + im.at(y0, x1, c) * fx;
  double bot = im.at(y1, x0, c) * (1 - fx) + im.at(y1, x1, c) * fx;
  return top * (1 - fy) + bot * fy;
}

uint8_t sample_nearest(const img::Mask& m, double sy, double sx) {
  int y = clampi(static_cast<int>(std::lround(sy)), 0, m.height - 1);
  int x = clampi(static_cast<int>(std::lround(sx)), 0, m.width - 1);
  return m.at(y, x);
}

struct RotMap {
  double cy, cx, cosa, sina;
  // output pixel -> source coordinates
  void source(int y, int x, double& sy, double& sx) const {
    double dy = y - cy, dx = x - cx;
    sx = cx + dx * cosa + dy * sina;
    sy = cy - dx * sina + dy * cosa;
  }
};

RotMap make_rot(double degrees, int h, int w) {
  double rad = degrees * std::numbers::pi / 180.0;
  return {(h - 1) / 2.0, (w - 1) / 2.0, std::cos(rad), std::sin(rad)};
}

// Gaussian-ish smoothed noise field: iid noise passed through three box
// blurs, then scaled so the largest displacement magnitude is max_disp.
std::vector<double> smooth_field(int h, int w, Rng& rng, double max_disp) {
  std::vector<double> f(static_cast<size_t>(h) * w);
  for (auto& v : f) v = rng.uniform(-1.0, 1.0);
  const int radius = 5;
  std::vector<double> tmp(f.size());
  for (int pass = 0; pass < 3; ++pass) {
    // horizontal then vertical box blur, clamped at the borders
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) acc += f[static_cast<size_t>(y) * w + clampi(x + k, 0, w - 1)];
        tmp[static_cast<size_t>(y) * w + x] = acc / (2 * radius + 1);
      }
    for (int x = 0; x < w; ++x)
      for (int y = 0; y < h; ++y) {
        double acc = 0;
        for (int k = -radius; k <= radius; ++k) acc += tmp[static_cast<size_t>(clampi(y + k, 0, h - 1)) * w + x];
        f[static_cast<size_t>(y) * w + x] = acc / (2 * radius + 1);
      }
  }
  double peak = 0;
  for (double v : f) peak = std::max(peak, std::abs(v));
  double s = peak > 0 ? max_disp / peak : 0.0;
  for (auto& v : f) v *= s;
  return f;
}

}  // namespace

img::Image rotate_bilinear(const img::Image& im, double degrees) {
  img::Image out(im.height, im.width, im.channels);
  RotMap rot = make_rot(degrees, im.height, im.width);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      double sy, sx;
      rot.source(y, x, sy, sx);
      for (int c = 0; c < im.channels; ++c) out.at(y, x, c) = sample_bilinear(im, sy, sx, c);
    }
  return out;
}

img::Mask rotate_nearest(const img::Mask& m, double degrees) {
  img::Mask out(m.height, m.width);
  RotMap rot = make_rot(degrees, m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      double sy, sx;
      rot.source(y, x, sy, sx);
      out.at(y, x) = sample_nearest(m, sy, sx);
    }
  return out;
}

std::pair<img::Image, img::Mask> basic(const img::Image& im, const img::Mask& label,
                                       Rng& rng, const BasicParams& params) {
  if (im.height != label.height || im.width != label.width) {
    throw img::ImageError("basic: image and label dimensions differ");
  }
  img::Image image = im;
  img::Mask mask = label;

  if (rng.uniform() < params.flip_prob) {
    image = hflip(image);
    mask = hflip(mask);
  }
  if (rng.uniform() < params.rotate_prob) {
    double angle = rng.uniform(-params.max_angle_deg, params.max_angle_deg);
    image = rotate_bilinear(image, angle);
    mask = rotate_nearest(mask, angle);
  }
  if (rng.uniform() < params.elastic_prob) {
    auto dy = smooth_field(im.height, im.width, rng, params.elastic_max_disp);
    auto dx = smooth_field(im.height, im.width, rng, params.elastic_max_disp);
    img::Image warped(im.height, im.width, im.channels);
    img::Mask wmask(im.height, im.width);
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) {
        size_t i = static_cast<size_t>(y) * im.width + x;
        double sy = y + dy[i], sx = x + dx[i];
        for (int c = 0; c < im.channels; ++c) warped.at(y, x, c) = sample_bilinear(image, sy, sx, c);
        wmask.at(y, x) = sample_nearest(mask, sy, sx);
      }
    image = std::move(warped);
    mask = std::move(wmask);
  }
  if (rng.uniform() < params.photo_prob) {
    double brightness = rng.uniform(params.brightness_lo, params.brightness_hi);
    double contrast = rng.uniform(params.contrast_lo, params.contrast_hi);
    for (auto& v : image.values) {
      v = std::clamp((v * brightness - 0.5) * contrast + 0.5, 0.0, 1.0);
    }
  }
  return {std::move(image), std::move(mask)};
}

img::Image random_erasing(const img::Image& im, Rng& rng, const RandomErasingParams& params) {
  if (rng.uniform() >= params.prob) return im;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double area = rng.uniform(params.area_lo, params.area_hi) * im.height * im.width;
    double aspect = rng.uniform(params.aspect_lo, params.aspect_hi);  // h/w
    int h = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    int w = static_cast<int>(std::lround(std::sqrt(area / aspect)));
    if (h < 1 || w < 1 || h > im.height || w > im.width) continue;
    int y0 = rng.uniform_int(0, im.height - h);
    int x0 = rng.uniform_int(0, im.width - w);
    img::Image out = im;
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x)
        for (int c = 0; c < im.channels; ++c) out.at(y, x, c) = rng.uniform();
    return out;
  }
  return im;
}

img::Image cutout(const img::Image& im, Rng& rng, int size) {
  if (size <= 0) throw img::ImageError("cutout size must be positive");
  int cy = rng.uniform_int(0, im.height - 1);
  int cx = rng.uniform_int(0, im.width - 1);
  img::Image out = im;
  int y0 = std::max(0, cy - size / 2), y1 = std::min(im.height, cy - size / 2 + size);
  int x0 = std::max(0, cx - size / 2), x1 = std::min(im.width, cx - size / 2 + size);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < im.channels; ++c) out.at(y, x, c) = 0.0;
  return out;
}

CutMixResult cutmix(const img::Image& ia, const img::Mask& la, const img::Image& ib,
                    const img::Mask& lb, Rng& rng) {
  if (!ia.same_dims(ib) || ia.height != la.height || ia.width != la.width ||
      !la.same_dims(lb)) {
    throw img::ImageError("cutmix: dimension mismatch");
  }
  double frac = rng.uniform(0.1, 0.4);
  double aspect = rng.uniform(0.5, 2.0);
  double area = frac * ia.height * ia.width;
  int h = clampi(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, ia.height);
  int w = clampi(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, ia.width);
  int y0 = rng.uniform_int(0, ia.height - h);
  int x0 = rng.uniform_int(0, ia.width - w);

  CutMixResult r{ia, ib, la, lb};
  for (int y = y0; y < y0 + h; ++y)
    for (int x = x0; x < x0 + w; ++x) {
      for (int c = 0; c < ia.channels; ++c) {
        std::swap(r.image_a.at(y, x, c), r.image_b.at(y, x, c));
      }
      std::swap(r.label_a.at(y, x), r.label_b.at(y, x));
    }
  return r;
}

img::Image gridmask(const img::Image& im, Rng& rng, const GridMaskParams& params) {
  // Periods that divide the short side keep the zeroed fraction exactly
  // (side/d)^2 for every phase; 64px images offer {8,16,32}.
  int side = std::min(im.height, im.width);
  std::vector<int> units;
  for (int d = params.unit_lo; d <= params.unit_hi; ++d) {
    if (d >= 2 && side % d == 0) units.push_back(d);
  }
  if (units.empty()) units.push_back(clampi(side, 2, params.unit_hi));
  int d = units[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(units.size()) - 1))];
  int s = static_cast<int>(std::lround((1.0 - params.keep_ratio) * d));
  if (s <= 0) return im;

  int py = rng.uniform_int(0, d - 1);
  int px = rng.uniform_int(0, d - 1);
  img::Image out = im;
  for (int y = 0; y < im.height; ++y) {
    bool ystrike = ((y - py) % d + d) % d < s;
    if (!ystrike) continue;
    for (int x = 0; x < im.width; ++x) {
      if (((x - px) % d + d) % d < s) {
        for (int c = 0; c < im.channels; ++c) out.at(y, x, c) = 0.0;
      }
    }
  }
  return out;
}

}  // namespace redraw::aug
