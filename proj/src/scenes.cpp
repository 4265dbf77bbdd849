#include "redraw/scenes.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "redraw/dataset.hpp"
#include "redraw/parallel.hpp"
#include "redraw/rng.hpp"

namespace redraw::scenes {

namespace {

constexpr Rgb kCar{0.72, 0.16, 0.14};
constexpr Rgb kTree{0.15, 0.60, 0.20};
constexpr Rgb kBuilding{0.45, 0.50, 0.62};
constexpr Rgb kWheel{0.08, 0.08, 0.09};
constexpr Rgb kTrunk{0.36, 0.22, 0.12};
constexpr Rgb kSkyTop{0.55, 0.68, 0.88};
constexpr Rgb kSkyBottom{0.78, 0.85, 0.97};
constexpr Rgb kRoadTop{0.24, 0.24, 0.26};
constexpr Rgb kRoadBottom{0.30, 0.30, 0.32};
constexpr Rgb kShoulderTop{0.33, 0.31, 0.25};
constexpr Rgb kShoulderBottom{0.38, 0.36, 0.30};

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb jitter(const Rgb& c, Rng& rng, double amount) {
  return {c.r + rng.uniform(-amount, amount), c.g + rng.uniform(-amount, amount),
          c.b + rng.uniform(-amount, amount)};
}

void put(img::Image& im, int y, int x, const Rgb& c) {
  im.at(y, x, 0) = c.r;
  im.at(y, x, 1) = c.g;
  im.at(y, x, 2) = c.b;
}

struct Box {
  int y0, x0, y1, x1;  // inclusive
};

bool boxes_overlap(const Box& a, const Box& b) {
  return a.y0 <= b.y1 && b.y0 <= a.y1 && a.x0 <= b.x1 && b.x0 <= a.x1;
}

void fill_rect(img::Image& im, img::Mask& m, const Box& b, const Rgb& c) {
  for (int y = b.y0; y <= b.y1; ++y)
    for (int x = b.x0; x <= b.x1; ++x) {
      put(im, y, x, c);
      m.at(y, x) = 1;
    }
}

void fill_disc(img::Image& im, img::Mask& m, int cy, int cx, int r, const Rgb& c) {
  for (int y = cy - r; y <= cy + r; ++y)
    for (int x = cx - r; x <= cx + r; ++x) {
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) {
        put(im, y, x, c);
        m.at(y, x) = 1;
      }
    }
}

struct Placed {
  Box box;
  Instance instance;
};

// Draws one object whose bounding box is already chosen; box dims come
// from draw_dims for the same (cls, rng draw sequence).
struct ObjDims {
  int w, h;   // bounding box
  int body_w, body_h, radius, trunk_h;
};

ObjDims draw_dims(ObjectClass cls, Rng& rng) {
  ObjDims d{};
  switch (cls) {
    case ObjectClass::Car:
      d.body_w = rng.uniform_int(8, 13);
      d.body_h = rng.uniform_int(4, 6);
      d.w = d.body_w;
      d.h = d.body_h + 2;  // wheels hang one row below, radius 1
      break;
    case ObjectClass::Tree:
      d.radius = rng.uniform_int(3, 5);
      d.trunk_h = rng.uniform_int(2, 3);
      d.w = 2 * d.radius + 1;
      d.h = 2 * d.radius + 1 + d.trunk_h;
      break;
    case ObjectClass::Building:
      d.body_w = rng.uniform_int(6, 11);
      d.body_h = rng.uniform_int(8, 13);
      d.w = d.body_w;
      d.h = d.body_h;
      break;
  }
  return d;
}

void draw_object(img::Image& im, Instance& inst, ObjectClass cls, const ObjDims& d,
                 int y0, int x0, Rng& rng) {
  switch (cls) {
    case ObjectClass::Car: {
      Rgb body = jitter(kCar, rng, 0.05);
      Rgb wheel = jitter(kWheel, rng, 0.02);
      fill_rect(im, inst.mask, {y0, x0, y0 + d.body_h - 1, x0 + d.body_w - 1}, body);
      fill_disc(im, inst.mask, y0 + d.body_h, x0 + 2, 1, wheel);
      fill_disc(im, inst.mask, y0 + d.body_h, x0 + d.body_w - 3, 1, wheel);
      break;
    }
    case ObjectClass::Tree: {
      Rgb crown = jitter(kTree, rng, 0.05);
      Rgb trunk = jitter(kTrunk, rng, 0.03);
      int cx = x0 + d.radius;
      fill_disc(im, inst.mask, y0 + d.radius, cx, d.radius, crown);
      fill_rect(im, inst.mask,
                {y0 + 2 * d.radius + 1, cx, y0 + 2 * d.radius + d.trunk_h, cx + 1}, trunk);
      break;
    }
    case ObjectClass::Building: {
      Rgb wall = jitter(kBuilding, rng, 0.05);
      fill_rect(im, inst.mask, {y0, x0, y0 + d.body_h - 1, x0 + d.body_w - 1}, wall);
      break;
    }
  }
}

bool try_build_scene(const SceneSpec& spec, Rng& rng, SceneSample& out) {
  int W = spec.width, H = spec.height;
  out.image = img::Image(H, W, 3);
  out.free_space = img::Mask(H, W);
  out.instances.clear();

  int horizon = static_cast<int>(std::lround(H * rng.uniform(spec.horizon_lo, spec.horizon_hi)));
  double cx = W / 2.0 + rng.uniform(-0.05, 0.05) * W;
  double bottom_w = rng.uniform(spec.road_bottom_lo, spec.road_bottom_hi) * W;
  double top_w = rng.uniform(spec.road_top_lo, spec.road_top_hi) * W;

  for (int y = 0; y < horizon; ++y) {
    double t = horizon > 1 ? static_cast<double>(y) / (horizon - 1) : 0.0;
    Rgb sky = lerp(kSkyTop, kSkyBottom, t);
    for (int x = 0; x < W; ++x) put(out.image, y, x, sky);
  }
  for (int y = horizon; y < H; ++y) {
    double t = H - 1 > horizon ? static_cast<double>(y - horizon) / (H - 1 - horizon) : 1.0;
    Rgb shoulder = lerp(kShoulderTop, kShoulderBottom, t);
    Rgb road = lerp(kRoadTop, kRoadBottom, t);
    double half = (top_w + (bottom_w - top_w) * t) / 2.0;
    for (int x = 0; x < W; ++x) {
      if (std::abs(x + 0.5 - cx) <= half) {
        put(out.image, y, x, road);
        out.free_space.at(y, x) = 1;
      } else {
        put(out.image, y, x, shoulder);
      }
    }
  }

  double frac = static_cast<double>(img::mask_area(out.free_space)) / (static_cast<double>(W) * H);
  if (frac < 0.15 || frac > 0.5) return false;

  int count = rng.uniform_int(spec.min_objects, spec.max_objects);
  std::vector<Box> placed;
  int band_lo = 2, band_hi = horizon - 2;  // inclusive rows; one sky row above the road
  for (int i = 0; i < count; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      auto cls = static_cast<ObjectClass>(rng.uniform_int(0, kNumClasses - 1));
      ObjDims dims = draw_dims(cls, rng);
      if (band_hi - band_lo + 1 < dims.h || W - 2 < dims.w) continue;
      int y0 = rng.uniform_int(band_lo, band_hi - dims.h + 1);
      int x0 = rng.uniform_int(1, W - 1 - dims.w);
      Box box{y0, x0, y0 + dims.h - 1, x0 + dims.w - 1};
      // 2px clearance keeps neighboring instances 4-disconnected
      Box grown{box.y0 - 2, box.x0 - 2, box.y1 + 2, box.x1 + 2};
      bool clear = true;
      for (const auto& other : placed) clear = clear && !boxes_overlap(grown, other);
      if (!clear) continue;
      Instance inst{img::Mask(H, W), cls};
      draw_object(out.image, inst, cls, dims, y0, x0, rng);
      out.instances.push_back(std::move(inst));
      placed.push_back(box);
      ok = true;
    }
    if (!ok) return false;
  }

  for (auto& v : out.image.values) {
    v = std::clamp(v + rng.uniform(-0.02, 0.02), 0.0, 1.0);
  }
  return true;
}

}  // namespace

const char* class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::Car: return "car";
    case ObjectClass::Tree: return "tree";
    case ObjectClass::Building: return "building";
  }
  throw img::ImageError("bad object class");
}

ObjectClass class_from_name(const std::string& name) {
  if (name == "car") return ObjectClass::Car;
  if (name == "tree") return ObjectClass::Tree;
  if (name == "building") return ObjectClass::Building;
  throw img::ImageError("unknown object class: " + name);
}

const std::array<Rgb, kNumClasses>& class_palette() {
  static const std::array<Rgb, kNumClasses> p{kCar, kTree, kBuilding};
  return p;
}

const std::vector<PaletteEntry>& quantization_palette() {
  static const std::vector<PaletteEntry> p{
      {kCar, 0},
      {kWheel, 0},
      {kTree, 1},
      {kTrunk, 1},
      {kBuilding, 2},
      {kSkyTop, -1},
      {lerp(kSkyTop, kSkyBottom, 0.5), -1},
      {kSkyBottom, -1},
      {kRoadTop, -1},
      {kRoadBottom, -1},
      {kShoulderTop, -1},
      {kShoulderBottom, -1},
  };
  return p;
}

SceneSample generate_scene(const SceneSpec& spec, int index) {
  if (index < 0) throw img::ImageError("scene index must be non-negative");
  if (spec.width < 16 || spec.height < 16) {
    throw img::ImageError("scene size too small for the road layout");
  }
  if (spec.min_objects < 0 || spec.min_objects > spec.max_objects) {
    throw img::ImageError("bad object count range");
  }
  SceneSample sample;
  for (uint64_t attempt = 0; attempt < 32; ++attempt) {
    Rng rng(derive_seed({spec.seed, static_cast<uint64_t>(index), attempt}));
    if (try_build_scene(spec, rng, sample)) return sample;
  }
  throw img::ImageError("scene spec infeasible: could not place objects after 32 layouts");
}

std::string generate_dataset(const SceneSpec& spec, int n, const std::string& out_dir) {
  if (n < 1) throw img::ImageError("dataset size must be at least 1");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "labels");
  fs::create_directories(fs::path(out_dir) / "masks");

  std::vector<ManifestRecord> records(n);
  par::parallel_for(0, n, [&](int64_t lo, int64_t hi) {
    char buf[64];
    for (int64_t i = lo; i < hi; ++i) {
      SceneSample s = generate_scene(spec, static_cast<int>(i));
      ManifestRecord& rec = records[i];
      std::snprintf(buf, sizeof(buf), "images/scene_%05lld.ppm", static_cast<long long>(i));
      rec.image = buf;
      std::snprintf(buf, sizeof(buf), "labels/scene_%05lld.pgm", static_cast<long long>(i));
      rec.label = buf;
      img::save_ppm((fs::path(out_dir) / rec.image).string(), s.image);
      img::save_pgm((fs::path(out_dir) / rec.label).string(), s.free_space);
      for (size_t k = 0; k < s.instances.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "masks/scene_%05lld_obj%zu.pgm",
                      static_cast<long long>(i), k);
        img::save_pgm((fs::path(out_dir) / buf).string(), s.instances[k].mask);
        rec.instances.push_back({buf, class_name(s.instances[k].cls)});
      }
      rec.seed = spec.seed;
      rec.index = i;
    }
  });

  auto manifest = (fs::path(out_dir) / "manifest.jsonl").string();
  write_manifest(manifest, records);
  return manifest;
}

}  // namespace redraw::scenes
