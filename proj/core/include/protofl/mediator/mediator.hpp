#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protofl/diff/tensor.hpp"
#include "protofl/repr/param_vector.hpp"

namespace protofl::mediator {

using diff::Tensor;

struct TeacherConfig {
  std::size_t input_dim = 32;
  std::size_t hidden_dim = 128;
  std::size_t output_dim = 32;
  // Approximate per-coordinate standard deviation of teacher outputs.
  double output_scale = 2.0;
  std::uint64_t seed = 7;

  void validate() const;
};

// Frozen, seeded random-weight MLP standing in for an off-the-shelf
// pretrained model: tanh hidden layer, linear output. Weights are fixed at
// construction and never change.
class Teacher {
 public:
  explicit Teacher(const TeacherConfig& config);

  std::string id() const;
  const TeacherConfig& config() const noexcept { return config_; }
  std::size_t output_dim() const noexcept { return config_.output_dim; }
  const repr::ParamVector& weights() const noexcept { return weights_; }

  // [rows, input_dim] -> [rows, D]; rank-1 -> rank-1.
  Tensor embed(const Tensor& samples) const;

 private:
  TeacherConfig config_;
  repr::ParamVector weights_;
};

// Seeded N(0, I) "off-the-shelf" samples, [size, dim].
Tensor make_pool(std::size_t size, std::size_t dim, std::uint64_t seed);

struct Prototype {
  std::uint64_t client_id = 0;
  Tensor vector;
  std::string teacher_id;
  std::uint64_t teacher_seed = 0;
  std::size_t pool_index = 0;

  friend bool operator==(const Prototype&, const Prototype&) = default;
};

// Issues exactly one prototype per client. Registrations are serialized by
// a mutex; issued prototypes are immutable values.
//
// Pool samples are scanned in index order; a sample is accepted only when
// its embedding's |cosine| with every already-issued prototype is below
// `max_abs_cosine`, so issued targets stay well separated. Rejected samples
// are skipped, never reused for a different purpose.
class PrototypeRegistry {
 public:
  PrototypeRegistry(Teacher teacher, Tensor pool, double max_abs_cosine = 0.5);

  // Idempotent: re-registering returns the stored prototype unchanged.
  // Throws CapacityError when no acceptable unused pool sample remains.
  Prototype register_client(std::uint64_t client_id);

  std::optional<Prototype> find(std::uint64_t client_id) const;
  std::size_t issued() const;
  std::vector<Prototype> all() const;

  const Teacher& teacher() const noexcept { return teacher_; }
  const Tensor& pool() const noexcept { return pool_; }

 private:
  Teacher teacher_;
  Tensor pool_;
  Tensor pool_embeddings_;
  double max_abs_cosine_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, Prototype> issued_;
  std::vector<bool> used_;
  std::size_t cursor_ = 0;
};

// Mean over a in A, s in S of cosine(F(a), F(s)). Throws ContractError on an
// empty set, DimensionError when A's width differs from the teacher input.
double teacher_affinity(const Tensor& samples, const Teacher& teacher, const Tensor& pool);

double cosine(std::span<const double> a, std::span<const double> b);

// Prototype export, little-endian:
//   magic "PFLPROTO", version u32 (1), config hash u64, client id u64,
//   teacher id (u32 length + bytes), teacher seed u64, pool index u64,
//   D u32, values f64 x D
void save_prototype(const std::filesystem::path& path, const Prototype& proto, std::uint64_t config_hash);
Prototype load_prototype(const std::filesystem::path& path, std::uint64_t* config_hash = nullptr);

}  // namespace protofl::mediator
