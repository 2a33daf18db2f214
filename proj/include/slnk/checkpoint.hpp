#pragma once

// SLNK container: the one binary format used for checkpoints, exported
// sub-networks, and feature caches.
//
//   magic   "SLNK" (4 bytes)
//   version u32 little-endian (currently 1)
//   count   u32 little-endian
//   entries count times:
//     name_len u32, name bytes (UTF-8)
//     rank     u32
//     dims     rank x u32
//     payload  prod(dims) x f32 little-endian
//   config_len u32, config bytes (UTF-8; may be empty)

#include "slnk/common.hpp"

namespace slnk {

struct CheckpointEntry {
  std::string name;
  Shape dims;
  std::vector<float> data;
};

struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::vector<CheckpointEntry> entries;
  std::string config_text;

  void add(const std::string& name, Shape dims, std::vector<float> data);
  void add_scalar(const std::string& name, float v) { add(name, {}, {v}); }

  const CheckpointEntry* find(const std::string& name) const;
  const CheckpointEntry& require(const std::string& name) const;
  bool has(const std::string& name) const { return find(name) != nullptr; }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace slnk
