#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "protofl/repr/param_vector.hpp"

namespace protofl::repr {

// Binary parameter checkpoint, all integers and floats little-endian:
//
//   magic    8 bytes  "PFLPARAM"
//   version  u32      (1)
//   config   u64      hash of the run configuration that produced it
//   kind     string   u32 length + bytes, e.g. "encoder" or "flow"
//   entries  u32
//   per entry: name (string), rank (u32), dims (u64 x rank)
//   count    u64      total value count, must equal the layout size
//   values   f64 x count
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;
  std::uint64_t config_hash = 0;
  ParamVector params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);

}  // namespace protofl::repr
