// Trains a small denoiser on generated scenes and reports how reliably
// class-token redraws land on the requested palette color, plus wall times.
// Dry run for the steering acceptance gate; also handy when tuning.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "redraw/diffusion.hpp"
#include "redraw/scenes.hpp"

using namespace redraw;
using namespace redraw::diff;
namespace fs = std::filesystem;

namespace {

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

int nearest_class(double r, double g, double b) {
  const auto& pal = scenes::class_palette();
  int best = 0;
  double bd = 1e9;
  for (int i = 0; i < scenes::kNumClasses; ++i) {
    double d = (pal[i].r - r) * (pal[i].r - r) + (pal[i].g - g) * (pal[i].g - g) +
               (pal[i].b - b) * (pal[i].b - b);
    if (d < bd) {
      bd = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

int main(int argc, char** argv) {
  int steps = 2000;
  int n_scenes = 128;
  int redraws = 100;
  double ema = 0.0;
  double lr = 1e-3;
  int batch = 4;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (!std::strcmp(argv[i], "--steps")) steps = std::atoi(argv[i + 1]);
    if (!std::strcmp(argv[i], "--scenes")) n_scenes = std::atoi(argv[i + 1]);
    if (!std::strcmp(argv[i], "--redraws")) redraws = std::atoi(argv[i + 1]);
    if (!std::strcmp(argv[i], "--ema")) ema = std::atof(argv[i + 1]);
    if (!std::strcmp(argv[i], "--lr")) lr = std::atof(argv[i + 1]);
    if (!std::strcmp(argv[i], "--batch")) batch = std::atoi(argv[i + 1]);
  }

  double t0 = now_s();
  scenes::SceneSpec spec;
  spec.seed = 1234;
  auto dir = (fs::temp_directory_path() / "redraw_probe_ds").string();
  fs::remove_all(dir);
  std::string manifest = scenes::generate_dataset(spec, n_scenes, dir);
  std::printf("scenes: %d in %.1fs\n", n_scenes, now_s() - t0);

  NoiseSchedule sched = make_schedule(kDefaultT, kDefaultBetaStart, kDefaultBetaEnd);
  DenoiserNet net(1234);
  DiffusionTrainConfig cfg;
  cfg.steps = steps;
  cfg.batch = batch;
  cfg.lr = lr;
  cfg.ema = ema;
  cfg.seed = 1234;

  double t1 = now_s();
  LossCurve curve = train_diffusion(net, manifest, sched, cfg);
  double train_s = now_s() - t1;
  if (!curve.empty()) {
    double first = curve.front().second, last = curve.back().second;
    std::printf("train: %d steps in %.1fs (%.1f ms/step), loss %.4f -> %.4f (x%.3f)\n",
                steps, train_s, 1000.0 * train_s / steps, first, last, last / first);
    for (size_t i = 0; i < curve.size(); i += curve.size() >= 8 ? curve.size() / 8 : 1) {
      std::printf("  step %4d  loss %.4f\n", curve[i].first, curve[i].second);
    }
  }

  // held-out scenes supply redraw locations
  scenes::SceneSpec hspec;
  hspec.seed = 555;
  std::vector<scenes::SceneSample> held;
  std::vector<std::pair<int, int>> spots;  // (scene, instance)
  for (int i = 0; static_cast<int>(spots.size()) < redraws; ++i) {
    held.push_back(scenes::generate_scene(hspec, i));
    for (size_t j = 0; j < held.back().instances.size() &&
                       static_cast<int>(spots.size()) < redraws;
         ++j) {
      spots.emplace_back(static_cast<int>(held.size()) - 1, static_cast<int>(j));
    }
  }

  for (int cls = 0; cls < scenes::kNumClasses; ++cls) {
    auto token = static_cast<ObjectClass>(cls);
    double t2 = now_s();
    int hits = 0;
    for (int base = 0; base < redraws; base += 20) {
      int chunk = std::min(20, redraws - base);
      std::vector<RedrawJob> jobs(chunk);
      for (int i = 0; i < chunk; ++i) {
        auto [si, ii] = spots[base + i];
        jobs[i] = {&held[si].image, &held[si].instances[ii].mask, token,
                   derive_seed({9000, static_cast<uint64_t>(cls),
                                static_cast<uint64_t>(base + i)})};
      }
      std::vector<img::Image> outs = inpaint_batch(net, jobs, sched);
      for (int i = 0; i < chunk; ++i) {
        auto [si, ii] = spots[base + i];
        const img::Mask& m = held[si].instances[ii].mask;
        double r = 0, g = 0, b = 0;
        int64_t area = img::mask_area(m);
        for (int y = 0; y < m.height; ++y)
          for (int x = 0; x < m.width; ++x)
            if (m.at(y, x)) {
              r += outs[i].at(y, x, 0);
              g += outs[i].at(y, x, 1);
              b += outs[i].at(y, x, 2);
            }
        if (nearest_class(r / area, g / area, b / area) == cls) ++hits;
      }
    }
    std::printf("token %-8s: %3d/%d redraws on-color (%.0f%%) in %.1fs\n",
                scenes::class_name(token), hits, redraws, 100.0 * hits / redraws,
                now_s() - t2);
  }
  std::printf("total: %.1fs\n", now_s() - t0);
  return 0;
}
