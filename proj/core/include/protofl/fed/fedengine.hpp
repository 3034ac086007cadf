#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "protofl/data/datasets.hpp"
#include "protofl/diff/optim.hpp"
#include "protofl/losses/losses.hpp"
#include "protofl/mediator/mediator.hpp"
#include "protofl/repr/augment.hpp"
#include "protofl/repr/encoder.hpp"

namespace protofl::fed {

using diff::Tensor;

struct FederationConfig {
  std::size_t num_clients = 8;
  std::size_t rounds = 50;
  std::size_t local_epochs = 1;
  // 0 means every client participates each round.
  std::size_t clients_per_round = 0;
  std::size_t batch_size = 32;
  diff::OptimizerConfig optimizer = diff::OptimizerConfig::sgd(1e-3);
  losses::Phase1Weights weights;
  repr::AugmentPolicy augment;
  std::uint64_t seed = 0;
  // Worker threads for per-round client training; results do not depend on it.
  std::size_t threads = 1;

  std::size_t participants() const noexcept {
    return clients_per_round == 0 ? num_clients : clients_per_round;
  }
  void validate() const;
};

// Audit trail of one aggregation round.
struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::uint64_t> participants;  // ascending client ids
  std::vector<std::size_t> sample_counts;
  // Mean batch loss over each participant's last local epoch.
  std::vector<double> final_losses;
  std::uint64_t checksum = 0;  // of the aggregated global parameters
};

// Everything a client's local training may see: its own shard, its own
// prototype and the broadcast snapshot of the global model.
struct ClientInputs {
  const data::ClientShard& shard;
  const mediator::Prototype& prototype;
  const repr::ParamVector& snapshot;
  std::size_t round = 0;
};

struct ClientUpdate {
  repr::ParamVector params;
  std::size_t sample_count = 0;
  double final_loss = 0.0;
};

using ClientTrainer = std::function<ClientUpdate(const ClientInputs&)>;

// theta_g = sum_k (n_k / sum_j n_j) theta_k, summed in list order.
// DimensionError on layout mismatch; ContractError on empty input or a
// non-positive count.
repr::ParamVector fedavg(std::span<const repr::ParamVector> params, std::span<const std::size_t> counts);

// Aggregation weights n_k / sum_j n_j.
std::vector<double> fedavg_weights(std::span<const std::size_t> counts);

// Phase-1 objective over a batch, evaluated without a tape: used for
// reporting and descent checks.
double evaluate_phase1_loss(const repr::Encoder& encoder, const Tensor& x, const Tensor& x_hat,
                            const mediator::Prototype& prototype, const losses::Phase1Weights& weights);

// Local epochs of minibatch descent on the phase-1 objective, starting from
// the snapshot. Shuffling and augmentation draw from the stream keyed by
// (seed, client id, round). The snapshot is never modified.
ClientUpdate client_training(const ClientInputs& inputs, const repr::EncoderConfig& encoder_config,
                             const FederationConfig& config);

struct Phase1Result {
  repr::ParamVector global;
  std::vector<RoundRecord> rounds;
};

// Runs `config.rounds` rounds over the given shards: select participants,
// train each from the same broadcast snapshot (optionally in parallel),
// aggregate over the participants in ascending id order.
//
// Every shard's client must already be registered with `registry`. A custom
// `trainer` replaces client_training (used to instrument data access).
Phase1Result run_phase1(const std::vector<data::ClientShard>& shards, const mediator::PrototypeRegistry& registry,
                        const repr::EncoderConfig& encoder_config, repr::ParamVector initial,
                        const FederationConfig& config, const ClientTrainer& trainer = {});

// Participants of a round: all clients, or a seeded sample without
// replacement, returned in ascending order of shard position.
std::vector<std::size_t> select_participants(std::size_t num_clients, std::size_t per_round, std::uint64_t seed,
                                             std::size_t round);

}  // namespace protofl::fed
