#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "redraw/image.hpp"

namespace redraw::scenes {

enum class ObjectClass { Car = 0, Tree = 1, Building = 2 };
inline constexpr int kNumClasses = 3;

const char* class_name(ObjectClass c);
ObjectClass class_from_name(const std::string& name);  // throws on unknown

struct Rgb {
  double r = 0, g = 0, b = 0;
};

// Mean color of each object class. Pairwise distances exceed 0.25 so class
// identity stays measurable from pixels alone.
const std::array<Rgb, kNumClasses>& class_palette();

// Reference colors for nearest-centroid pixel labeling: object classes,
// their auxiliary part colors (wheels, trunk), and background shades.
// cls is the ObjectClass index, or -1 for background.
struct PaletteEntry {
  Rgb color;
  int cls;
};
const std::vector<PaletteEntry>& quantization_palette();

struct SceneSpec {
  int width = 64;
  int height = 64;
  int min_objects = 2;
  int max_objects = 5;
  uint64_t seed = 0;
  // road trapezoid ranges, as fractions of image size
  double horizon_lo = 0.40, horizon_hi = 0.52;
  double road_bottom_lo = 0.75, road_bottom_hi = 1.0;
  double road_top_lo = 0.12, road_top_hi = 0.30;
};

struct Instance {
  img::Mask mask;
  ObjectClass cls;
};

struct SceneSample {
  img::Image image;
  img::Mask free_space;
  std::vector<Instance> instances;
};

// Deterministic in (spec.seed, index). Sky gradient above the horizon,
// road trapezoid below (the free-space label), objects only in the sky
// band so instance masks never touch free space.
SceneSample generate_scene(const SceneSpec& spec, int index);

// Writes PPM images, PGM labels and instance masks, and a JSON-lines
// manifest into out_dir. Returns the manifest path.
std::string generate_dataset(const SceneSpec& spec, int n, const std::string& out_dir);

}  // namespace redraw::scenes
