#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protofl/data/datasets.hpp"
#include "protofl/eval/metrics.hpp"
#include "protofl/fed/fedengine.hpp"
#include "protofl/mediator/mediator.hpp"
#include "protofl/ocnf/ocnf.hpp"
#include "protofl/repr/encoder.hpp"

namespace protofl::eval {

using diff::Tensor;

enum class Scorer { kOcnf, kGde, kKde };
std::string to_string(Scorer s);
Scorer scorer_from_string(const std::string& name);

// Which loss terms are active. Disabling pd sets alpha = 1, disabling p sets
// alpha = 0, disabling reg sets lambda = 0.
struct AblationFlags {
  bool use_pd = true;
  bool use_p = true;
  bool use_reg = true;

  void validate() const;
  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct ExperimentConfig {
  repr::EncoderConfig encoder;
  mediator::TeacherConfig teacher;
  std::size_t pool_size = 512;
  double prototype_max_cosine = 0.5;
  fed::FederationConfig federation;
  ocnf::OcnfConfig ocnf;
  Scorer scorer = Scorer::kOcnf;
  // <= 0 selects Scott's rule.
  double kde_bandwidth = 0.0;
  AblationFlags ablation;
  // Master seed; federation, flow and pool seeds are derived from it.
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // Copy with ablation flags folded into alpha / lambda and sub-seeds derived.
  ExperimentConfig resolved() const;
  void validate() const;
};

struct ClientResult {
  std::uint64_t client_id = 0;
  int label = 0;
  bool new_joiner = false;
  double auroc = 0.0;
  double eer = 0.0;
  std::vector<ScoredExample> scores;
  std::vector<double> phase2_losses;  // empty for GDE/KDE
};

struct GroupSummary {
  std::size_t clients = 0;
  MeanStd auroc;
  MeanStd eer;
};

struct ExperimentReport {
  std::string scorer;
  std::vector<ClientResult> clients;
  MeanStd auroc;
  MeanStd eer;
  std::optional<GroupSummary> veterans;
  std::optional<GroupSummary> new_joiners;
  AblationFlags ablation;
  double alpha = 0.0;
  double lambda = 0.0;
  std::vector<fed::RoundRecord> rounds;
  std::uint64_t global_checksum = 0;

  // Structured record: one entry per client plus aggregates. Scores are
  // left out (see score dumps).
  nlohmann::json to_json() const;
  // Delimited summary, one row per client then aggregate rows.
  std::string to_csv() const;
};

// Outcome of phase 1: registry state and the frozen global model.
struct GlobalTraining {
  repr::Encoder global;
  std::vector<mediator::Prototype> prototypes;
  std::vector<fed::RoundRecord> rounds;
  std::vector<std::uint64_t> veterans;
  std::vector<std::uint64_t> new_joiners;
};

// Seeded choice of gamma new-joiner client ids out of K (ascending).
std::vector<std::uint64_t> choose_new_joiners(std::size_t num_clients, std::size_t gamma, std::uint64_t seed);

// Registers the veterans with a mediator and runs phase 1 over their shards.
// `config` must already be resolved.
GlobalTraining train_global(const std::vector<data::ClientShard>& shards, const ExperimentConfig& config,
                            const std::vector<std::uint64_t>& new_joiners,
                            const fed::ClientTrainer& trainer = {});

// Phase 2 for every client against the frozen global model, then one-vs-rest
// scoring of the full test set with each client's class as the target.
// Returns the report and, for the OC-NF scorer, the trained flows.
struct Evaluation {
  ExperimentReport report;
  std::vector<ocnf::FlowModel> flows;
};
Evaluation evaluate_clients(const std::vector<data::ClientShard>& shards, const data::LabeledDataset& test,
                            const GlobalTraining& global, const ExperimentConfig& config);

ExperimentReport run_one_vs_rest(const data::DataSplit& split, const ExperimentConfig& config);

// gamma clients skip phase 1 and only train their flow on the final global
// model. ContractError unless 0 <= gamma < K.
ExperimentReport run_scalability(const data::DataSplit& split, std::size_t num_clients, std::size_t gamma,
                                 const ExperimentConfig& config);

ExperimentReport run_ablation(const data::DataSplit& split, const ExperimentConfig& config,
                              const AblationFlags& flags);

// One phase-1 run, then every requested scorer on the identical global model.
std::vector<ExperimentReport> run_classifier_swap(const data::DataSplit& split, const ExperimentConfig& config,
                                                  const std::vector<Scorer>& scorers);

}  // namespace protofl::eval
