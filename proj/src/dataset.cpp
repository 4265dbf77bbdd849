#include "redraw/dataset.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace redraw {

using nlohmann::json;

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw img::ImageError("cannot open manifest: " + path);
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw img::ImageError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    ManifestRecord rec;
    rec.image = j.at("image").get<std::string>();
    rec.label = j.at("label").get<std::string>();
    for (const auto& inst : j.at("instances")) {
      rec.instances.push_back({inst.at("mask").get<std::string>(),
                               inst.at("class").get<std::string>()});
    }
    rec.seed = j.at("seed").get<uint64_t>();
    rec.index = j.at("index").get<int64_t>();
    if (j.contains("provenance")) rec.provenance = j.at("provenance").dump();
    out.push_back(std::move(rec));
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw img::ImageError("cannot open manifest for writing: " + path);
  for (const auto& rec : records) {
    json inst = json::array();
    for (const auto& i : rec.instances) {
      inst.push_back({{"mask", i.mask}, {"class", i.cls}});
    }
    json j{{"image", rec.image},
           {"label", rec.label},
           {"instances", inst},
           {"seed", rec.seed},
           {"index", rec.index}};
    if (!rec.provenance.empty()) j["provenance"] = json::parse(rec.provenance);
    os << j.dump() << "\n";
  }
  if (!os) throw img::ImageError("failed writing manifest: " + path);
}

std::string manifest_dir(const std::string& manifest_path) {
  auto dir = std::filesystem::path(manifest_path).parent_path();
  return dir.empty() ? std::string(".") : dir.string();
}

LabeledSample load_sample(const std::string& manifest_path, const ManifestRecord& rec) {
  auto dir = std::filesystem::path(manifest_dir(manifest_path));
  return {img::load_ppm((dir / rec.image).string()),
          img::load_pgm((dir / rec.label).string())};
}

}  // namespace redraw
