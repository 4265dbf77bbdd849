#include "redraw/maskprov.hpp"

#include <array>
#include <filesystem>
#include <stdexcept>

namespace redraw::maskprov {

int label_components(const std::vector<uint8_t>& fg, int height, int width,
                     std::vector<int>& labels) {
  if (fg.size() != static_cast<size_t>(height) * width) {
    throw std::invalid_argument("label_components: grid size mismatch");
  }
  labels.assign(fg.size(), -1);
  int count = 0;
  std::vector<int> stack;
  for (int start = 0; start < static_cast<int>(fg.size()); ++start) {
    if (!fg[start] || labels[start] != -1) continue;
    int id = count++;
    stack.push_back(start);
    labels[start] = id;
    while (!stack.empty()) {
      int p = stack.back();
      stack.pop_back();
      int y = p / width, x = p % width;
      const std::array<int, 4> ny = {y - 1, y + 1, y, y};
      const std::array<int, 4> nx = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= height || nx[k] < 0 || nx[k] >= width) continue;
        int q = ny[k] * width + nx[k];
        if (fg[q] && labels[q] == -1) {
          labels[q] = id;
          stack.push_back(q);
        }
      }
    }
  }
  return count;
}

std::vector<InstanceProposal> filter_foreground(std::vector<InstanceProposal> proposals,
                                                const img::Mask& free_space) {
  std::vector<InstanceProposal> out;
  for (InstanceProposal& p : proposals) {
    if (!p.mask.same_dims(free_space)) {
      throw std::invalid_argument("filter_foreground: mask dimensions differ");
    }
    for (size_t i = 0; i < p.mask.values.size(); ++i) {
      if (free_space.values[i]) p.mask.values[i] = 0;
    }
    if (img::mask_area(p.mask) > 0) out.push_back(std::move(p));
  }
  return out;
}

std::vector<InstanceProposal> oracle_masks(const scenes::SceneSample& sample) {
  std::vector<InstanceProposal> raw;
  raw.reserve(sample.instances.size());
  for (const scenes::Instance& inst : sample.instances) {
    raw.push_back({inst.mask, inst.cls, ProposalSource::Oracle});
  }
  return filter_foreground(std::move(raw), sample.free_space);
}

std::vector<InstanceProposal> oracle_masks(const std::string& manifest_path,
                                           const ManifestRecord& rec,
                                           const img::Mask& free_space) {
  auto dir = std::filesystem::path(manifest_dir(manifest_path));
  std::vector<InstanceProposal> raw;
  raw.reserve(rec.instances.size());
  for (const ManifestInstance& inst : rec.instances) {
    raw.push_back({img::load_pgm((dir / inst.mask).string()),
                   scenes::class_from_name(inst.cls), ProposalSource::Oracle});
  }
  return filter_foreground(std::move(raw), free_space);
}

std::vector<InstanceProposal> heuristic_masks(const img::Image& image,
                                              const img::Mask& free_space,
                                              int min_area) {
  if (image.channels != 3 || image.height != free_space.height ||
      image.width != free_space.width) {
    throw std::invalid_argument("heuristic_masks: need an RGB image matching the mask");
  }
  const auto& palette = scenes::quantization_palette();
  int h = image.height, w = image.width;

  // nearest centroid per pixel; cls < 0 entries are background shades
  std::vector<uint8_t> object(static_cast<size_t>(h) * w, 0);
  std::vector<int8_t> pixel_cls(static_cast<size_t>(h) * w, -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double r = image.at(y, x, 0), g = image.at(y, x, 1), b = image.at(y, x, 2);
      double best = 1e18;
      int cls = -1;
      for (const scenes::PaletteEntry& e : palette) {
        double d = (e.color.r - r) * (e.color.r - r) + (e.color.g - g) * (e.color.g - g) +
                   (e.color.b - b) * (e.color.b - b);
        if (d < best) {
          best = d;
          cls = e.cls;
        }
      }
      size_t i = static_cast<size_t>(y) * w + x;
      object[i] = cls >= 0;
      pixel_cls[i] = static_cast<int8_t>(cls);
    }
  }

  std::vector<int> labels;
  int count = label_components(object, h, w, labels);

  std::vector<int64_t> area(count, 0);
  // per-component class votes
  std::vector<std::array<int64_t, scenes::kNumClasses>> votes(
      count, std::array<int64_t, scenes::kNumClasses>{});
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    ++area[labels[i]];
    ++votes[labels[i]][pixel_cls[i]];
  }

  std::vector<InstanceProposal> out;
  for (int id = 0; id < count; ++id) {
    if (area[id] < min_area) continue;
    InstanceProposal p;
    p.source = ProposalSource::Heuristic;
    p.mask = img::Mask(h, w);
    for (size_t i = 0; i < labels.size(); ++i) p.mask.values[i] = labels[i] == id;
    int best_cls = 0;
    for (int c = 1; c < scenes::kNumClasses; ++c) {
      if (votes[id][c] > votes[id][best_cls]) best_cls = c;
    }
    p.cls = static_cast<scenes::ObjectClass>(best_cls);
    out.push_back(std::move(p));
  }
  return filter_foreground(std::move(out), free_space);
}

}  // namespace redraw::maskprov
