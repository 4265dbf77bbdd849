#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "redraw/image.hpp"

namespace redraw {

// One line of a JSON-lines dataset manifest. Paths are relative to the
// manifest's own directory.
struct ManifestInstance {
  std::string mask;
  std::string cls;
};

struct ManifestRecord {
  std::string image;
  std::string label;
  std::vector<ManifestInstance> instances;
  uint64_t seed = 0;
  int64_t index = 0;
  // Serialized JSON object describing how an augmented sample was made;
  // empty for originals.
  std::string provenance;
};

std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

std::string manifest_dir(const std::string& manifest_path);

struct LabeledSample {
  img::Image image;
  img::Mask label;
};
// Loads the image/label pair behind a record, resolving against the
// manifest's directory.
LabeledSample load_sample(const std::string& manifest_path, const ManifestRecord& rec);

}  // namespace redraw
