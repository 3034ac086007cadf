#include "protofl/mediator/mediator.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "protofl/binary_io.hpp"
#include "protofl/diff/ops.hpp"
#include "protofl/errors.hpp"
#include "protofl/repr/mlp.hpp"
#include "protofl/rng.hpp"

namespace protofl::mediator {
namespace {

constexpr char kMagic[9] = "PFLPROTO";
constexpr std::uint32_t kVersion = 1;
// E[tanh(u)^2] for u ~ N(0, 1), used to calibrate the output scale.
constexpr double kTanhSecondMoment = 0.3943;

}  // namespace

void TeacherConfig::validate() const {
  std::ostringstream errs;
  if (input_dim == 0) errs << " input_dim must be positive;";
  if (hidden_dim == 0) errs << " hidden_dim must be positive;";
  if (output_dim == 0) errs << " output_dim must be positive;";
  if (!(output_scale > 0.0)) errs << " output_scale must be > 0;";
  if (const auto s = errs.str(); !s.empty()) throw ConfigError("teacher:" + s);
}

Teacher::Teacher(const TeacherConfig& config) : config_(config) {
  config_.validate();
  repr::ParamLayout layout;
  repr::add_linear(layout, "hidden", config_.input_dim, config_.hidden_dim);
  repr::add_linear(layout, "out", config_.hidden_dim, config_.output_dim);
  weights_ = repr::ParamVector(std::move(layout));
  auto rng = make_stream(config_.seed, "teacher-weights");
  std::normal_distribution<double> w1(0.0, 1.0 / std::sqrt(static_cast<double>(config_.input_dim)));
  for (auto& w : weights_.slice(0)) w = w1(rng);
  std::normal_distribution<double> w2(
      0.0, config_.output_scale / std::sqrt(static_cast<double>(config_.hidden_dim) * kTanhSecondMoment));
  for (auto& w : weights_.slice(2)) w = w2(rng);
}

std::string Teacher::id() const {
  std::ostringstream os;
  os << "mlp-teacher:in" << config_.input_dim << "-h" << config_.hidden_dim << "-d" << config_.output_dim
     << ":seed" << config_.seed;
  return os.str();
}

Tensor Teacher::embed(const Tensor& samples) const {
  const bool single = samples.rank() == 1;
  const Tensor batch = single ? samples.reshaped({1, samples.size()}) : samples;
  if (batch.rank() != 2 || batch.cols() != config_.input_dim) {
    throw DimensionError("teacher expects inputs of width " + std::to_string(config_.input_dim) + ", got " +
                         diff::shape_string(samples.shape()));
  }
  diff::Tape tape;
  const auto bound = repr::bind(tape, weights_, false);
  auto h = diff::tanh(repr::linear(tape.constant(batch), bound, 0));
  Tensor out = repr::linear(h, bound, 2).value();
  return single ? out.reshaped({config_.output_dim}) : out;
}

Tensor make_pool(std::size_t size, std::size_t dim, std::uint64_t seed) {
  auto rng = make_stream(seed, "prototype-pool");
  std::normal_distribution<double> n01;
  Tensor pool(diff::Shape{size, dim});
  for (auto& v : pool.data()) v = n01(rng);
  return pool;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine of vectors with different lengths");
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return dot / (std::max(std::sqrt(aa), 1e-12) * std::max(std::sqrt(bb), 1e-12));
}

PrototypeRegistry::PrototypeRegistry(Teacher teacher, Tensor pool, double max_abs_cosine)
    : teacher_(std::move(teacher)), pool_(std::move(pool)), max_abs_cosine_(max_abs_cosine) {
  pool_embeddings_ = teacher_.embed(pool_);
  used_.assign(pool_.rows(), false);
}

Prototype PrototypeRegistry::register_client(std::uint64_t client_id) {
  std::lock_guard lock(mu_);
  if (auto it = issued_.find(client_id); it != issued_.end()) return it->second;
  for (; cursor_ < pool_.rows(); ++cursor_) {
    if (used_[cursor_]) continue;
    const auto candidate = pool_embeddings_.row(cursor_);
    bool separated = true;
    for (const auto& [id, p] : issued_) {
      if (std::abs(cosine(candidate, p.vector.data())) >= max_abs_cosine_) {
        separated = false;
        break;
      }
    }
    if (!separated) continue;
    used_[cursor_] = true;
    Prototype proto{client_id,
                    Tensor::vector(std::vector<double>(candidate.begin(), candidate.end())),
                    teacher_.id(),
                    teacher_.config().seed,
                    cursor_};
    ++cursor_;
    issued_.emplace(client_id, proto);
    return proto;
  }
  throw CapacityError("prototype pool exhausted after " + std::to_string(issued_.size()) +
                      " registrations (pool size " + std::to_string(pool_.rows()) + ")");
}

std::optional<Prototype> PrototypeRegistry::find(std::uint64_t client_id) const {
  std::lock_guard lock(mu_);
  if (auto it = issued_.find(client_id); it != issued_.end()) return it->second;
  return std::nullopt;
}

std::size_t PrototypeRegistry::issued() const {
  std::lock_guard lock(mu_);
  return issued_.size();
}

std::vector<Prototype> PrototypeRegistry::all() const {
  std::lock_guard lock(mu_);
  std::vector<Prototype> out;
  for (const auto& [id, p] : issued_) out.push_back(p);
  return out;
}

double teacher_affinity(const Tensor& samples, const Teacher& teacher, const Tensor& pool) {
  if (samples.size() == 0 || (samples.rank() == 2 && samples.rows() == 0)) {
    throw ContractError("teacher_affinity on an empty sample set");
  }
  const Tensor a = teacher.embed(samples.rank() == 1 ? samples.reshaped({1, samples.size()}) : samples);
  const Tensor s = teacher.embed(pool);
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < s.rows(); ++j) total += cosine(a.row(i), s.row(j));
  }
  return total / static_cast<double>(a.rows() * s.rows());
}

void save_prototype(const std::filesystem::path& path, const Prototype& proto, std::uint64_t config_hash) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  binio::write_magic(os, kMagic);
  binio::write_u32(os, kVersion);
  binio::write_u64(os, config_hash);
  binio::write_u64(os, proto.client_id);
  binio::write_string(os, proto.teacher_id);
  binio::write_u64(os, proto.teacher_seed);
  binio::write_u64(os, proto.pool_index);
  binio::write_u32(os, static_cast<std::uint32_t>(proto.vector.size()));
  binio::write_f64s(os, proto.vector.data());
  if (!os) throw Error("write failed for " + path.string());
}

Prototype load_prototype(const std::filesystem::path& path, std::uint64_t* config_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open prototype file " + path.string());
  binio::expect_magic(is, kMagic);
  if (const auto v = binio::read_u32(is, "version"); v != kVersion) {
    throw FormatError("unsupported prototype file version " + std::to_string(v));
  }
  const auto hash = binio::read_u64(is, "config hash");
  if (config_hash) *config_hash = hash;
  Prototype p;
  p.client_id = binio::read_u64(is, "client id");
  p.teacher_id = binio::read_string(is, "teacher id");
  p.teacher_seed = binio::read_u64(is, "teacher seed");
  p.pool_index = binio::read_u64(is, "pool index");
  const auto d = binio::read_u32(is, "dimension");
  if (d == 0) throw FormatError("prototype with zero dimension");
  p.vector = Tensor::vector(binio::read_f64s(is, d, "values"));
  return p;
}

}  // namespace protofl::mediator
