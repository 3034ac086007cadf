#include "protofl/fed/fedengine.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "protofl/errors.hpp"
#include "protofl/parallel.hpp"
#include "protofl/rng.hpp"

namespace protofl::fed {

void FederationConfig::validate() const {
  std::ostringstream errs;
  if (num_clients == 0) errs << " num_clients must be positive;";
  if (rounds == 0) errs << " rounds must be >= 1;";
  if (local_epochs == 0) errs << " local_epochs must be positive;";
  if (clients_per_round > num_clients) errs << " clients_per_round must be <= num_clients;";
  if (batch_size == 0) errs << " batch_size must be positive;";
  if (threads == 0) errs << " threads must be positive;";
  if (const auto s = errs.str(); !s.empty()) throw ConfigError("federation:" + s);
  optimizer.validate();
  weights.validate();
  augment.validate();
}

std::vector<double> fedavg_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw ContractError("fedavg over an empty client list");
  std::size_t total = 0;
  for (auto c : counts) {
    if (c == 0) throw ContractError("fedavg sample counts must be positive");
    total += c;
  }
  std::vector<double> w;
  w.reserve(counts.size());
  for (auto c : counts) w.push_back(static_cast<double>(c) / static_cast<double>(total));
  return w;
}

repr::ParamVector fedavg(std::span<const repr::ParamVector> params, std::span<const std::size_t> counts) {
  if (params.empty()) throw ContractError("fedavg over an empty client list");
  if (params.size() != counts.size()) throw ContractError("fedavg: params and counts differ in length");
  for (const auto& p : params) {
    if (!(p.layout() == params[0].layout())) throw DimensionError("fedavg: client parameter layouts differ");
  }
  const auto weights = fedavg_weights(counts);
  repr::ParamVector out(params[0].layout(), 0.0);
  auto acc = out.values();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto v = params[k].values();
    const double w = weights[k];
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w * v[j];
  }
  return out;
}

double evaluate_phase1_loss(const repr::Encoder& encoder, const Tensor& x, const Tensor& x_hat,
                            const mediator::Prototype& prototype, const losses::Phase1Weights& weights) {
  diff::Tape tape;
  const auto bound = repr::bind(tape, encoder.params(), false);
  const auto r = encoder.forward(bound, tape.constant(x));
  const auto r_hat = encoder.forward(bound, tape.constant(x_hat));
  return losses::phase1_loss(r, r_hat, prototype.vector, weights).value().item();
}

ClientUpdate client_training(const ClientInputs& inputs, const repr::EncoderConfig& encoder_config,
                             const FederationConfig& config) {
  const auto& samples = inputs.shard.samples();
  const std::size_t n = inputs.shard.cardinality();
  if (n == 0) throw ContractError("client " + std::to_string(inputs.shard.client_id()) + " has an empty shard");
  if (inputs.prototype.client_id != inputs.shard.client_id()) {
    throw ContractError("prototype of client " + std::to_string(inputs.prototype.client_id) + " handed to client " +
                        std::to_string(inputs.shard.client_id()));
  }
  repr::Encoder encoder(encoder_config, inputs.snapshot);
  diff::Optimizer optimizer(config.optimizer);
  auto rng = make_stream(config.seed, "client-train", {inputs.shard.client_id(), inputs.round});

  const std::size_t dim = samples.cols();
  std::vector<std::size_t> order(n);
  double last_epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < config.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t rows = std::min(config.batch_size, n - start);
      Tensor batch(diff::Shape{rows, dim});
      for (std::size_t i = 0; i < rows; ++i) {
        const auto src = samples.row(order[start + i]);
        std::copy(src.begin(), src.end(), batch.row(i).begin());
      }
      auto views = repr::augment_pair(batch, config.augment, rng);

      diff::Tape tape;
      const auto bound = repr::bind(tape, encoder.params(), true);
      const auto r = encoder.forward(bound, tape.constant(std::move(views.x)));
      const auto r_hat = encoder.forward(bound, tape.constant(std::move(views.x_hat)));
      const auto loss = losses::phase1_loss(r, r_hat, inputs.prototype.vector, config.weights);
      loss_sum += loss.value().item();
      ++batches;
      const auto grads = repr::gather_gradients(tape.backward(loss), bound, encoder.params().layout());
      optimizer.step(encoder.mutable_params().values(), grads);
    }
    last_epoch_loss = loss_sum / static_cast<double>(batches);
  }
  return {std::move(encoder.mutable_params()), n, last_epoch_loss};
}

std::vector<std::size_t> select_participants(std::size_t num_clients, std::size_t per_round, std::uint64_t seed,
                                             std::size_t round) {
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  if (per_round == 0 || per_round >= num_clients) return ids;
  auto rng = make_stream(seed, "client-selection", {round});
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(per_round);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Phase1Result run_phase1(const std::vector<data::ClientShard>& shards, const mediator::PrototypeRegistry& registry,
                        const repr::EncoderConfig& encoder_config, repr::ParamVector initial,
                        const FederationConfig& config, const ClientTrainer& trainer) {
  config.validate();
  if (shards.size() != config.num_clients) {
    throw ConfigError("federation configured for " + std::to_string(config.num_clients) + " clients but " +
                      std::to_string(shards.size()) + " shards were supplied");
  }
  if (!(initial.layout() == encoder_config.layout())) {
    throw DimensionError("initial global model does not match the encoder layout");
  }
  std::vector<mediator::Prototype> prototypes;
  prototypes.reserve(shards.size());
  for (const auto& shard : shards) {
    auto p = registry.find(shard.client_id());
    if (!p) throw ContractError("client " + std::to_string(shard.client_id()) + " is not registered with the mediator");
    prototypes.push_back(std::move(*p));
  }

  ClientTrainer train = trainer;
  if (!train) {
    train = [&](const ClientInputs& in) { return client_training(in, encoder_config, config); };
  }

  Phase1Result result{std::move(initial), {}};
  for (std::size_t t = 0; t < config.rounds; ++t) {
    const auto chosen = select_participants(shards.size(), config.clients_per_round, config.seed, t);
    // Immutable between barriers: every participant sees this same snapshot.
    const repr::ParamVector snapshot = result.global;
    std::vector<ClientUpdate> updates(chosen.size());
    parallel_for(chosen.size(), config.threads, [&](std::size_t i) {
      const auto k = chosen[i];
      try {
        updates[i] = train(ClientInputs{shards[k], prototypes[k], snapshot, t});
      } catch (const std::exception& e) {
        throw Error("round " + std::to_string(t) + ", client " + std::to_string(shards[k].client_id()) + ": " +
                    e.what());
      }
    });

    RoundRecord record;
    record.round = t;
    std::vector<repr::ParamVector> params;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      record.participants.push_back(shards[chosen[i]].client_id());
      record.sample_counts.push_back(updates[i].sample_count);
      record.final_losses.push_back(updates[i].final_loss);
      params.push_back(std::move(updates[i].params));
      counts.push_back(updates[i].sample_count);
    }
    result.global = fedavg(params, counts);
    record.checksum = result.global.checksum();
    result.rounds.push_back(std::move(record));
  }
  return result;
}

}  // namespace protofl::fed
