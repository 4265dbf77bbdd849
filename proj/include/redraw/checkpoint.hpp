#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "redraw/tensor.hpp"

namespace redraw {

// Flat binary tensor container. Layout, all integers little-endian u32:
//   "RFCK" | version | count
//   per tensor: name_len, name bytes, rank, dims..., payload of f64
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path,
                      const std::vector<CheckpointEntry>& entries,
                      uint32_t version = kCheckpointVersion);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

// Whole-store convenience wrappers. Loading is strict: the file must hold
// exactly the store's names with matching shapes.
void save_parameters(const std::string& path, const ParameterStore& params,
                     const std::vector<CheckpointEntry>& extra = {});
// Returns the entries that were not parameters (extras such as schedules).
std::vector<CheckpointEntry> load_parameters(const std::string& path,
                                             ParameterStore& params);

}  // namespace redraw
