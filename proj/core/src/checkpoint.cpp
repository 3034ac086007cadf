#include "protofl/repr/checkpoint.hpp"

#include <fstream>

#include "protofl/binary_io.hpp"
#include "protofl/errors.hpp"

namespace protofl::repr {
namespace {
constexpr char kMagic[9] = "PFLPARAM";
constexpr std::uint32_t kMaxRank = 8;
}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  binio::write_magic(os, kMagic);
  binio::write_u32(os, kCheckpointVersion);
  binio::write_u64(os, ckpt.config_hash);
  binio::write_string(os, ckpt.kind);
  const auto& layout = ckpt.params.layout();
  binio::write_u32(os, static_cast<std::uint32_t>(layout.count()));
  for (const auto& e : layout.entries()) {
    binio::write_string(os, e.name);
    binio::write_u32(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) binio::write_u64(os, d);
  }
  binio::write_u64(os, ckpt.params.size());
  binio::write_f64s(os, ckpt.params.values());
}

Checkpoint read_checkpoint(std::istream& is) {
  binio::expect_magic(is, kMagic);
  const auto version = binio::read_u32(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_hash = binio::read_u64(is, "config hash");
  ckpt.kind = binio::read_string(is, "kind");
  const auto entries = binio::read_u32(is, "entry count");
  ParamLayout layout;
  for (std::uint32_t i = 0; i < entries; ++i) {
    auto name = binio::read_string(is, "entry name");
    const auto rank = binio::read_u32(is, "entry rank");
    if (rank > kMaxRank) throw FormatError("entry '" + name + "' has implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) {
      d = binio::read_u64(is, "entry dim");
      if (d == 0) throw FormatError("entry '" + name + "' has a zero dimension");
    }
    layout.add(std::move(name), std::move(shape));
  }
  const auto count = binio::read_u64(is, "value count");
  if (count != layout.total_size()) {
    throw FormatError("value count " + std::to_string(count) + " does not match layout size " +
                      std::to_string(layout.total_size()));
  }
  auto values = binio::read_f64s(is, count, "values");
  ckpt.params = ParamVector(std::move(layout), std::move(values));
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_checkpoint(os, ckpt);
  if (!os) throw Error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace protofl::repr
