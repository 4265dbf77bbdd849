#include "redraw/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");
static_assert(sizeof(double) == 8);

namespace redraw {

namespace {

constexpr char kMagic[4] = {'R', 'F', 'C', 'K'};

void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) {
    throw TensorError("truncated checkpoint: " + path);
  }
  return v;
}

}  // namespace

void write_checkpoint(const std::string& path,
                      const std::vector<CheckpointEntry>& entries,
                      uint32_t version) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw TensorError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, version);
  put_u32(os, static_cast<uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (shape_numel(e.shape) != static_cast<int64_t>(e.data.size())) {
      throw TensorError("checkpoint entry " + e.name + " has inconsistent shape");
    }
    put_u32(os, static_cast<uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(os, static_cast<uint32_t>(e.shape.size()));
    for (int d : e.shape) put_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size() * sizeof(double)));
  }
  if (!os) throw TensorError("failed writing checkpoint: " + path);
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw TensorError("not a checkpoint file: " + path);
  }
  uint32_t version = get_u32(is, path);
  if (version != kCheckpointVersion) {
    throw TensorError("unsupported checkpoint version " + std::to_string(version) +
                      " in " + path);
  }
  uint32_t count = get_u32(is, path);
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    uint32_t name_len = get_u32(is, path);
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len)) {
      throw TensorError("truncated checkpoint: " + path);
    }
    uint32_t rank = get_u32(is, path);
    if (rank > 8) throw TensorError("implausible tensor rank in " + path);
    e.shape.resize(rank);
    int64_t numel = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      e.shape[r] = static_cast<int>(get_u32(is, path));
      numel *= e.shape[r];
    }
    e.data.resize(static_cast<size_t>(numel));
    if (!is.read(reinterpret_cast<char*>(e.data.data()),
                 static_cast<std::streamsize>(e.data.size() * sizeof(double)))) {
      throw TensorError("truncated checkpoint: " + path);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_parameters(const std::string& path, const ParameterStore& params,
                     const std::vector<CheckpointEntry>& extra) {
  std::vector<CheckpointEntry> entries;
  entries.reserve(params.size() + extra.size());
  for (const auto& [name, p] : params) {
    entries.push_back({name, p.shape(), p.values()});
  }
  for (const auto& e : extra) entries.push_back(e);
  write_checkpoint(path, entries);
}

std::vector<CheckpointEntry> load_parameters(const std::string& path,
                                             ParameterStore& params) {
  auto entries = read_checkpoint(path);
  std::vector<CheckpointEntry> extras;
  std::unordered_set<std::string> loaded;
  for (auto& e : entries) {
    if (!params.contains(e.name)) {
      extras.push_back(std::move(e));
      continue;
    }
    Tensor& p = params.at(e.name);
    if (p.shape() != e.shape) {
      throw TensorError("checkpoint tensor " + e.name + " has shape " +
                        shape_str(e.shape) + ", expected " + shape_str(p.shape()));
    }
    p.mutable_values() = std::move(e.data);
    loaded.insert(e.name);
  }
  for (const auto& [name, p] : params) {
    if (!loaded.count(name)) {
      throw TensorError("checkpoint " + path + " is missing parameter " + name);
    }
  }
  return extras;
}

}  // namespace redraw
