#pragma once

#include <string>
#include <utility>
#include <vector>

#include "redraw/image.hpp"
#include "redraw/rng.hpp"

namespace redraw::aug {

// Canonical policy set orders the augmentation comparison table.
enum class PolicyKind {
  Standard,
  Basic,
  RandomErasing,
  Cutout,
  CutMix,
  GridMask,
  EraseRedraw,
};
const std::vector<PolicyKind>& policy_registry();
const char* policy_name(PolicyKind kind);
PolicyKind policy_from_name(const std::string& name);  // throws on unknown

struct BasicParams {
  double flip_prob = 0.5;
  double rotate_prob = 0.5;
  double photo_prob = 0.5;
  double elastic_prob = 0.5;
  double max_angle_deg = 15.0;
  double brightness_lo = 0.8, brightness_hi = 1.2;
  double contrast_lo = 0.8, contrast_hi = 1.2;
  double elastic_max_disp = 3.0;
};

struct RandomErasingParams {
  double prob = 1.0;
  double area_lo = 0.02, area_hi = 0.2;    // fraction of image area
  double aspect_lo = 0.3, aspect_hi = 3.3;
};

struct GridMaskParams {
  int unit_lo = 8, unit_hi = 32;  // grid period, sampled from divisors of the side
  double keep_ratio = 0.6;
};

img::Image hflip(const img::Image& im);
img::Mask hflip(const img::Mask& m);

// Rotation about the image center; bilinear with clamp-to-edge for images,
// nearest-neighbor for masks so labels stay binary.
img::Image rotate_bilinear(const img::Image& im, double degrees);
img::Mask rotate_nearest(const img::Mask& m, double degrees);

// Flip / rotate / elastic warp applied to image and label together,
// photometric jitter to the image alone.
std::pair<img::Image, img::Mask> basic(const img::Image& im, const img::Mask& label,
                                       Rng& rng, const BasicParams& params = {});

// One random rectangle refilled with independent uniform noise. Keeps
// retrying an in-bounds rectangle up to 10 times, then gives up untouched.
img::Image random_erasing(const img::Image& im, Rng& rng,
                          const RandomErasingParams& params = {});

// Zeroed square of the given side centered at a uniform pixel; the square
// may extend outside and is clipped.
img::Image cutout(const img::Image& im, Rng& rng, int size);

struct CutMixResult {
  img::Image image_a, image_b;
  img::Mask label_a, label_b;
};
// Swaps one random rectangle (area fraction 0.1..0.4) between the two
// images and the two labels.
CutMixResult cutmix(const img::Image& ia, const img::Mask& la, const img::Image& ib,
                    const img::Mask& lb, Rng& rng);

img::Image gridmask(const img::Image& im, Rng& rng, const GridMaskParams& params = {});

// k copies of every element, in order: {a,a,..,b,b,..}.
template <typename T>
std::vector<T> standard_duplicate(const std::vector<T>& in, int k) {
  std::vector<T> out;
  out.reserve(in.size() * static_cast<size_t>(k));
  for (const auto& v : in) {
    for (int i = 0; i < k; ++i) out.push_back(v);
  }
  return out;
}

}  // namespace redraw::aug
