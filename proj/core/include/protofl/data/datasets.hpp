#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "protofl/diff/tensor.hpp"

namespace protofl::data {

using diff::Tensor;

struct LabeledDataset {
  Tensor features;                  // [n, dim]
  std::vector<int> labels;          // in [0, num_classes)
  std::vector<std::uint64_t> ids;   // stable sample ids
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;  // optional

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  // Throws ContractError if labels, ids and features disagree.
  void check() const;
  LabeledDataset subset(const std::vector<std::size_t>& rows) const;
};

struct DataSplit {
  LabeledDataset train;
  LabeledDataset test;
};

// One client's private data: samples of exactly one class. Every call to
// samples() is counted so tests can audit who reads which shard.
class ClientShard {
 public:
  ClientShard(std::uint64_t client_id, int label, Tensor samples, std::vector<std::uint64_t> sample_ids);

  std::uint64_t client_id() const noexcept { return client_id_; }
  int label() const noexcept { return label_; }
  std::size_t cardinality() const noexcept { return ids_.size(); }
  const std::vector<std::uint64_t>& sample_ids() const noexcept { return ids_; }

  const Tensor& samples() const;
  std::uint64_t read_count() const noexcept { return reads_->load(); }

 private:
  std::uint64_t client_id_;
  int label_;
  Tensor samples_;
  std::vector<std::uint64_t> ids_;
  std::shared_ptr<std::atomic<std::uint64_t>> reads_;
};

// Client k receives exactly the training samples of class k.
// ConfigError when K differs from the class count.
std::vector<ClientShard> partition_extreme(const LabeledDataset& train, std::size_t num_clients);

// C unit-covariance Gaussian clusters in `dim` dimensions whose means are
// pairwise exactly `separation` apart (scaled random orthonormal frame).
// ConfigError when separation <= 0 or C > dim.
LabeledDataset gen_synthetic_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim,
                                   double separation, std::uint64_t seed);

// Seeded per-class split; each class keeps round(train_fraction * n_c) samples
// for training (at least one on each side when n_c >= 2).
DataSplit split_per_class(const LabeledDataset& data, double train_fraction, std::uint64_t seed);

struct TabularOptions {
  std::string label_column;
  std::vector<std::string> drop_columns;
  char delimiter = ',';
};

// Delimited text with a header row. Labels are arbitrary strings mapped to
// class indices in sorted order. Features are returned unscaled.
LabeledDataset load_tabular(const std::filesystem::path& path, const TabularOptions& options);

// Per-feature min-max scaling to [0, 1]; a constant feature maps to 0.
class MinMaxScaler {
 public:
  MinMaxScaler() = default;
  MinMaxScaler(std::vector<double> mins, std::vector<double> maxs);

  static MinMaxScaler fit(const Tensor& features);
  Tensor transform(const Tensor& features) const;

  const std::vector<double>& mins() const noexcept { return mins_; }
  const std::vector<double>& maxs() const noexcept { return maxs_; }

  // Structured text (JSON) persistence.
  std::string to_json() const;
  static MinMaxScaler from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static MinMaxScaler load(const std::filesystem::path& path);

 private:
  std::vector<double> mins_;
  std::vector<double> maxs_;
};

// IDX files (big-endian header: magic, then one u32 per dimension). Images
// must be unsigned-byte rank-3 (0x00000803), labels rank-1 (0x00000801).
// Pixels are scaled to [0, 1] and flattened.
LabeledDataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace protofl::data
