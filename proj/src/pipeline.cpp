#include "redraw/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <memory>
#include <utility>

#include "json.hpp"
#include "redraw/dataset.hpp"
#include "redraw/parallel.hpp"

namespace redraw::pipe {

using nlohmann::json;
namespace fs = std::filesystem;

AugmentedSample erase_then_redraw(const img::Image& image, const img::Mask& label,
                                  const std::vector<maskprov::InstanceProposal>& proposals,
                                  const diff::DenoiserNet& net,
                                  const diff::NoiseSchedule& sched,
                                  TokenPolicy token_policy, Rng& rng) {
  if (proposals.empty()) {
    std::fprintf(stderr, "erase_then_redraw: no proposals, duplicating the original\n");
    return {image, label, json{{"fallback", true}}.dump()};
  }
  const maskprov::InstanceProposal& p =
      proposals[rng.uniform_int(0, static_cast<int>(proposals.size()) - 1)];
  scenes::ObjectClass token =
      token_policy == TokenPolicy::Restyle
          ? static_cast<scenes::ObjectClass>(rng.uniform_int(0, scenes::kNumClasses - 1))
          : p.cls;
  img::Image redrawn = diff::inpaint(net, image, p.mask, token, sched, rng);
  json prov;
  prov["instance"] = {
      {"class", scenes::class_name(p.cls)},
      {"area", img::mask_area(p.mask)},
      {"origin", p.source == maskprov::ProposalSource::Oracle ? "oracle" : "heuristic"},
  };
  prov["token"] = scenes::class_name(token);
  return {std::move(redrawn), label, prov.dump()};
}

std::string augment_dataset(const std::string& manifest_path, const AugmentConfig& cfg,
                            const std::string& out_dir) {
  if (cfg.k < 1) throw PipelineError("augment_dataset: k must be at least 1");
  std::vector<ManifestRecord> sources = read_manifest(manifest_path);
  if (sources.empty()) {
    throw PipelineError("augment_dataset: empty manifest " + manifest_path);
  }

  // one shared read-only denoiser; workers never mutate it
  std::unique_ptr<diff::DenoiserNet> net;
  diff::NoiseSchedule sched;
  if (cfg.policy == aug::PolicyKind::EraseRedraw) {
    if (cfg.denoiser_checkpoint.empty()) {
      throw PipelineError("augment_dataset: erase_redraw needs a denoiser checkpoint");
    }
    net = std::make_unique<diff::DenoiserNet>(0);
    try {
      sched = diff::load_denoiser(cfg.denoiser_checkpoint, *net);
    } catch (const std::exception& e) {
      throw PipelineError("augment_dataset: cannot load denoiser checkpoint '" +
                          cfg.denoiser_checkpoint + "': " + e.what());
    }
  }

  try {
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "labels");
  } catch (const fs::filesystem_error& e) {
    throw PipelineError("augment_dataset: cannot create output directory: " +
                        std::string(e.what()));
  }

  auto src_dir = fs::path(manifest_dir(manifest_path));
  int64_t n = static_cast<int64_t>(sources.size());
  int k = cfg.k;
  std::vector<ManifestRecord> records(n * (k + 1));
  const char* pol = aug::policy_name(cfg.policy);

  par::parallel_for(0, n, [&](int64_t lo, int64_t hi) {
    char buf[64];
    auto image_name = [&buf](int64_t idx) {
      std::snprintf(buf, sizeof(buf), "images/sample_%06lld.ppm", static_cast<long long>(idx));
      return std::string(buf);
    };
    auto label_name = [&buf](int64_t idx) {
      std::snprintf(buf, sizeof(buf), "labels/sample_%06lld.pgm", static_cast<long long>(idx));
      return std::string(buf);
    };
    for (int64_t i = lo; i < hi; ++i) {
      const ManifestRecord& src = sources[i];
      int64_t base = i * (k + 1);

      ManifestRecord& orig = records[base];
      orig.image = image_name(base);
      orig.label = label_name(base);
      orig.seed = src.seed;
      orig.index = base;
      fs::copy_file(src_dir / src.image, fs::path(out_dir) / orig.image,
                    fs::copy_options::overwrite_existing);
      fs::copy_file(src_dir / src.label, fs::path(out_dir) / orig.label,
                    fs::copy_options::overwrite_existing);

      LabeledSample sample = load_sample(manifest_path, src);
      std::vector<maskprov::InstanceProposal> proposals;
      if (cfg.policy == aug::PolicyKind::EraseRedraw) {
        proposals = cfg.provider == maskprov::ProposalSource::Oracle
                        ? maskprov::oracle_masks(manifest_path, src, sample.label)
                        : maskprov::heuristic_masks(sample.image, sample.label);
      }

      for (int r = 0; r < k; ++r) {
        uint64_t sample_seed = derive_seed({cfg.seed, static_cast<uint64_t>(i),
                                            static_cast<uint64_t>(r)});
        Rng rng(sample_seed);
        int64_t idx = base + 1 + r;
        ManifestRecord& rec = records[idx];
        rec.image = image_name(idx);
        rec.label = label_name(idx);
        rec.seed = sample_seed;
        rec.index = idx;
        json prov;
        prov["policy"] = pol;
        prov["source_index"] = i;
        prov["replica"] = r;
        prov["seed"] = sample_seed;

        if (cfg.policy == aug::PolicyKind::Standard) {
          fs::copy_file(src_dir / src.image, fs::path(out_dir) / rec.image,
                        fs::copy_options::overwrite_existing);
          fs::copy_file(src_dir / src.label, fs::path(out_dir) / rec.label,
                        fs::copy_options::overwrite_existing);
          rec.provenance = prov.dump();
          continue;
        }

        img::Image im;
        img::Mask lb;
        switch (cfg.policy) {
          case aug::PolicyKind::Basic: {
            auto [bi, bl] = aug::basic(sample.image, sample.label, rng);
            im = std::move(bi);
            lb = std::move(bl);
            break;
          }
          case aug::PolicyKind::RandomErasing:
            im = aug::random_erasing(sample.image, rng);
            lb = sample.label;
            break;
          case aug::PolicyKind::Cutout:
            im = aug::cutout(sample.image, rng, sample.image.height / 4);
            lb = sample.label;
            break;
          case aug::PolicyKind::CutMix: {
            int64_t j = n == 1 ? i : (i + 1 + rng.uniform_int(0, static_cast<int>(n) - 2)) % n;
            LabeledSample partner = load_sample(manifest_path, sources[j]);
            aug::CutMixResult mixed =
                aug::cutmix(sample.image, sample.label, partner.image, partner.label, rng);
            im = std::move(mixed.image_a);
            lb = std::move(mixed.label_a);
            prov["partner_index"] = j;
            break;
          }
          case aug::PolicyKind::GridMask:
            im = aug::gridmask(sample.image, rng);
            lb = sample.label;
            break;
          case aug::PolicyKind::EraseRedraw: {
            AugmentedSample redrawn = erase_then_redraw(sample.image, sample.label, proposals,
                                                        *net, sched, cfg.token_policy, rng);
            im = std::move(redrawn.image);
            lb = std::move(redrawn.label);
            prov.update(json::parse(redrawn.provenance));
            break;
          }
          case aug::PolicyKind::Standard:
            break;  // handled above
        }
        img::save_ppm((fs::path(out_dir) / rec.image).string(), im);
        img::save_pgm((fs::path(out_dir) / rec.label).string(), lb);
        rec.provenance = prov.dump();
      }
    }
  });

  auto manifest = (fs::path(out_dir) / "manifest.jsonl").string();
  write_manifest(manifest, records);
  return manifest;
}

}  // namespace redraw::pipe
