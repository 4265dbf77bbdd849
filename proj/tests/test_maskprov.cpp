#include "redraw/maskprov.hpp"

#include <algorithm>
#include <vector>

#include "doctest.h"
#include "redraw/rng.hpp"
#include "redraw/scenes.hpp"

using namespace redraw;
using namespace redraw::maskprov;

namespace {

// Independent labeling oracle: every cell starts as its own label; labels
// propagate to the 4-neighborhood minimum until nothing changes.
int oracle_components(const std::vector<uint8_t>& fg, int h, int w,
                      std::vector<int>& labels) {
  labels.assign(fg.size(), -1);
  for (size_t i = 0; i < fg.size(); ++i)
    if (fg[i]) labels[i] = static_cast<int>(i);
  bool changed = true;
  while (changed) {
    changed = false;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int i = y * w + x;
        if (labels[i] < 0) continue;
        int best = labels[i];
        if (y > 0 && labels[i - w] >= 0) best = std::min(best, labels[i - w]);
        if (y + 1 < h && labels[i + w] >= 0) best = std::min(best, labels[i + w]);
        if (x > 0 && labels[i - 1] >= 0) best = std::min(best, labels[i - 1]);
        if (x + 1 < w && labels[i + 1] >= 0) best = std::min(best, labels[i + 1]);
        if (best < labels[i]) {
          labels[i] = best;
          changed = true;
        }
      }
    }
  }
  // canonicalize to first-appearance order
  std::vector<int> remap(fg.size(), -1);
  int count = 0;
  for (int& l : labels) {
    if (l < 0) continue;
    if (remap[l] == -1) remap[l] = count++;
    l = remap[l];
  }
  return count;
}

double mask_iou(const img::Mask& a, const img::Mask& b) {
  int64_t inter = img::mask_area(img::mask_intersection(a, b));
  int64_t uni = img::mask_area(img::mask_union(a, b));
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

TEST_CASE("component labeling agrees with the propagation oracle") {
  Rng rng(404);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<uint8_t> fg(16 * 16);
    for (uint8_t& v : fg) v = rng.bernoulli(0.4);
    std::vector<int> got, want;
    int gc = label_components(fg, 16, 16, got);
    int wc = oracle_components(fg, 16, 16, want);
    REQUIRE(gc == wc);
    REQUIRE(got == want);  // both use first-appearance numbering
  }
}

TEST_CASE("labeling separates diagonal touches and spans straight runs") {
  // two blocks touching only at a corner stay separate under 4-connectivity
  std::vector<uint8_t> fg = {
      1, 1, 0, 0,
      1, 1, 0, 0,
      0, 0, 1, 1,
      0, 0, 1, 1,
  };
  std::vector<int> labels;
  CHECK(label_components(fg, 4, 4, labels) == 2);
  CHECK(labels[0] == 0);
  CHECK(labels[10] == 1);

  std::vector<uint8_t> row(7, 1);
  CHECK(label_components(row, 1, 7, labels) == 1);
}

TEST_CASE("foreground filter subtracts and drops") {
  img::Mask fs(4, 4);
  for (int x = 0; x < 4; ++x) fs.at(3, x) = 1;

  InstanceProposal disjoint;
  disjoint.mask = img::Mask(4, 4);
  disjoint.mask.at(0, 0) = disjoint.mask.at(0, 1) = 1;

  InstanceProposal straddling;
  straddling.mask = img::Mask(4, 4);
  for (int x = 0; x < 4; ++x) straddling.mask.at(2, x) = straddling.mask.at(3, x) = 1;

  InstanceProposal swallowed;
  swallowed.mask = img::Mask(4, 4);
  swallowed.mask.at(3, 1) = 1;

  auto out = filter_foreground({disjoint, straddling, swallowed}, fs);
  REQUIRE(out.size() == 2);
  CHECK(out[0].mask.values == disjoint.mask.values);
  CHECK(img::mask_area(out[1].mask) == 4);  // 8 px minus the 4 in free space
  for (int x = 0; x < 4; ++x) {
    CHECK(out[1].mask.at(2, x) == 1);
    CHECK(out[1].mask.at(3, x) == 0);
  }
}

TEST_CASE("oracle provider passes through scene annotations") {
  scenes::SceneSpec spec;
  spec.seed = 31;
  for (int i = 0; i < 5; ++i) {
    scenes::SceneSample s = scenes::generate_scene(spec, i);
    auto props = oracle_masks(s);
    REQUIRE(props.size() == s.instances.size());
    for (size_t j = 0; j < props.size(); ++j) {
      CHECK(props[j].cls == s.instances[j].cls);
      CHECK(props[j].source == ProposalSource::Oracle);
      CHECK(props[j].mask.values == s.instances[j].mask.values);
      CHECK(img::masks_disjoint(props[j].mask, s.free_space));
      CHECK(img::mask_area(props[j].mask) > 0);
    }
  }
}

TEST_CASE("heuristic provider finds nothing in a bare sky") {
  img::Image sky(16, 16, 3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      sky.at(y, x, 0) = 0.45;
      sky.at(y, x, 1) = 0.65;
      sky.at(y, x, 2) = 0.85;
    }
  img::Mask fs(16, 16);
  CHECK(heuristic_masks(sky, fs).empty());
}

TEST_CASE("heuristic provider drops specks below the area floor") {
  img::Image im(16, 16, 3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      im.at(y, x, 0) = 0.45;
      im.at(y, x, 1) = 0.65;
      im.at(y, x, 2) = 0.85;
    }
  const auto& pal = scenes::class_palette();
  // 4-px car speck: below the default floor of 8
  for (int x = 5; x < 7; ++x)
    for (int y = 5; y < 7; ++y) {
      im.at(y, x, 0) = pal[0].r;
      im.at(y, x, 1) = pal[0].g;
      im.at(y, x, 2) = pal[0].b;
    }
  img::Mask fs(16, 16);
  CHECK(heuristic_masks(im, fs).empty());
  auto low_floor = heuristic_masks(im, fs, 4);
  REQUIRE(low_floor.size() == 1);
  CHECK(low_floor[0].cls == scenes::ObjectClass::Car);
  CHECK(low_floor[0].source == ProposalSource::Heuristic);
  CHECK(img::mask_area(low_floor[0].mask) == 4);
}

TEST_CASE("heuristic proposals recover ground truth on clean scenes") {
  scenes::SceneSpec spec;
  spec.seed = 57;
  int total = 0, matched = 0;
  for (int i = 0; i < 20; ++i) {
    scenes::SceneSample s = scenes::generate_scene(spec, i);
    auto props = heuristic_masks(s.image, s.free_space);
    for (const auto& p : props) {
      CHECK(img::masks_disjoint(p.mask, s.free_space));
      CHECK(img::mask_area(p.mask) >= 8);
    }
    for (const scenes::Instance& inst : s.instances) {
      ++total;
      for (const auto& p : props) {
        if (p.cls == inst.cls && mask_iou(p.mask, inst.mask) >= 0.9) {
          ++matched;
          break;
        }
      }
    }
  }
  // the full 100-scene quality bar lives in the acceptance gate; this is a
  // fast regression tripwire
  CHECK(total > 0);
  CHECK(matched >= total * 9 / 10);
}
