#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protofl/data/datasets.hpp"
#include "protofl/eval/experiments.hpp"

namespace protofl::run {

enum class DatasetKind { kSynthetic, kTabular, kIdx };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kSynthetic;
  // synthetic
  std::size_t classes = 8;
  std::size_t per_class = 300;
  std::size_t dim = 16;
  double separation = 8.0;
  // tabular
  std::filesystem::path path;
  data::TabularOptions tabular;
  // idx; without test files the training files are split like other sources
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;

  double train_fraction = 0.8;
  // Min-max scaling fitted on the training split. On by default for tabular
  // data only.
  bool scale = false;
};

// Everything a run needs. Sub-seeds (dataset, split, federation, flows,
// prototype pool) are derived from `seed`.
struct RunConfig {
  DatasetSpec dataset;
  // encoder.input_dim is filled in from the dataset.
  eval::ExperimentConfig experiment;
  std::size_t gamma = 0;
  std::filesystem::path output_dir = "protofl-out";

  // ConfigError listing every violated constraint.
  void validate() const;
  // Canonical serialization. Output dir and thread count are omitted: they do
  // not influence results.
  nlohmann::json to_json() const;
  std::uint64_t hash() const;
};

// Strict parse: unknown keys, wrong types and out-of-range values are all
// collected and reported in one ConfigError.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

std::string hex_hash(std::uint64_t h);

// Confines writes to one directory tree.
class OutputDir {
 public:
  explicit OutputDir(const std::filesystem::path& root);

  const std::filesystem::path& root() const noexcept { return root_; }
  // Resolves `relative` under the root; ContractError when it escapes.
  std::filesystem::path resolve(const std::filesystem::path& relative) const;
  // Writes via a temporary file and rename.
  void write_text(const std::filesystem::path& relative, const std::string& text) const;

 private:
  std::filesystem::path root_;
};

struct LoadedData {
  data::DataSplit split;
  std::optional<data::MinMaxScaler> scaler;
};
LoadedData load_data(const RunConfig& config);

struct RunOutcome {
  eval::ExperimentReport report;
  // Deterministic report body (no timestamps).
  std::string report_json;
  std::vector<std::filesystem::path> artifacts;
};

// Phase 1, phase 2 and evaluation, then all artifacts under the output dir:
// config.json, report.json, report.csv, manifest.json, encoder.ckpt, flows/client_<k>.ckpt,
// prototypes/client_<k>.proto and scaler.json when scaling is on. Nothing is
// written unless validation and every compute step succeed.
RunOutcome run(const RunConfig& config);

// Loads a finished run and writes scores/client_<k>.csv with one row per test
// sample. FormatError when an artifact is missing or carries a different
// config hash than config.json.
std::vector<std::filesystem::path> score_dump(const std::filesystem::path& run_dir);

}  // namespace protofl::run
