#include "protofl/eval/experiments.hpp"

#include <algorithm>
#include <cstdio>
#include <memory>
#include <set>
#include <sstream>

#include "protofl/errors.hpp"
#include "protofl/parallel.hpp"
#include "protofl/rng.hpp"

namespace protofl::eval {
namespace {

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

GroupSummary summarize(const std::vector<ClientResult>& clients, bool new_joiner) {
  std::vector<double> a, e;
  for (const auto& c : clients) {
    if (c.new_joiner != new_joiner) continue;
    a.push_back(c.auroc);
    e.push_back(c.eer);
  }
  return {a.size(), mean_std(a), mean_std(e)};
}

nlohmann::json summary_json(const GroupSummary& g) {
  return {{"clients", g.clients},
          {"auroc_mean", g.auroc.mean},
          {"auroc_std", g.auroc.std},
          {"eer_mean", g.eer.mean},
          {"eer_std", g.eer.std}};
}

}  // namespace

std::string to_string(Scorer s) {
  switch (s) {
    case Scorer::kOcnf: return "ocnf";
    case Scorer::kGde: return "gde";
    case Scorer::kKde: return "kde";
  }
  return "ocnf";
}

Scorer scorer_from_string(const std::string& name) {
  if (name == "ocnf") return Scorer::kOcnf;
  if (name == "gde") return Scorer::kGde;
  if (name == "kde") return Scorer::kKde;
  throw ConfigError("unknown scorer '" + name + "' (expected ocnf, gde or kde)");
}

void AblationFlags::validate() const {
  if (!use_pd && !use_p) throw ConfigError("ablation cannot disable both phase-1 terms (pd and p)");
}

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  c.ablation.validate();
  if (!c.ablation.use_pd) c.federation.weights.alpha = 1.0;
  if (!c.ablation.use_p) c.federation.weights.alpha = 0.0;
  if (!c.ablation.use_reg) c.ocnf.weights.lambda = 0.0;
  c.federation.seed = stream_seed(seed, "federation");
  c.ocnf.seed = stream_seed(seed, "ocnf");
  c.federation.threads = threads;
  return c;
}

void ExperimentConfig::validate() const {
  encoder.validate();
  teacher.validate();
  ablation.validate();
  federation.validate();
  ocnf.validate();
  std::ostringstream errs;
  if (teacher.output_dim != encoder.output_dim) errs << " teacher output dim must equal encoder output dim;";
  if (ocnf.flow.dim != encoder.output_dim) errs << " flow dim must equal encoder output dim;";
  if (pool_size == 0) errs << " pool_size must be positive;";
  if (!(prototype_max_cosine > 0.0 && prototype_max_cosine <= 1.0)) errs << " prototype_max_cosine must be in (0,1];";
  if (threads == 0) errs << " threads must be positive;";
  if (const auto s = errs.str(); !s.empty()) throw ConfigError("experiment:" + s);
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  j["scorer"] = scorer;
  j["alpha"] = alpha;
  j["lambda"] = lambda;
  j["ablation"] = {{"use_pd", ablation.use_pd}, {"use_p", ablation.use_p}, {"use_reg", ablation.use_reg}};
  j["global_checksum"] = hex64(global_checksum);
  auto& cl = j["clients"] = nlohmann::json::array();
  for (const auto& c : clients) {
    cl.push_back({{"client_id", c.client_id},
                  {"label", c.label},
                  {"new_joiner", c.new_joiner},
                  {"auroc", c.auroc},
                  {"eer", c.eer},
                  {"test_size", c.scores.size()},
                  {"phase2_losses", c.phase2_losses}});
  }
  j["aggregate"] = {{"auroc_mean", auroc.mean}, {"auroc_std", auroc.std}, {"eer_mean", eer.mean}, {"eer_std", eer.std}};
  if (veterans) j["veterans"] = summary_json(*veterans);
  if (new_joiners) j["new_joiners"] = summary_json(*new_joiners);
  auto& rs = j["rounds"] = nlohmann::json::array();
  for (const auto& r : rounds) {
    rs.push_back({{"round", r.round},
                  {"participants", r.participants},
                  {"sample_counts", r.sample_counts},
                  {"final_losses", r.final_losses},
                  {"checksum", hex64(r.checksum)}});
  }
  return j;
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream os;
  os << "row,client_id,label,new_joiner,auroc,eer\n";
  for (const auto& c : clients) {
    os << "client," << c.client_id << ',' << c.label << ',' << (c.new_joiner ? 1 : 0) << ',' << fmt_double(c.auroc)
       << ',' << fmt_double(c.eer) << '\n';
  }
  os << "mean,,,," << fmt_double(auroc.mean) << ',' << fmt_double(eer.mean) << '\n';
  os << "std,,,," << fmt_double(auroc.std) << ',' << fmt_double(eer.std) << '\n';
  return os.str();
}

std::vector<std::uint64_t> choose_new_joiners(std::size_t num_clients, std::size_t gamma, std::uint64_t seed) {
  if (gamma >= num_clients) {
    throw ContractError("gamma (" + std::to_string(gamma) + ") must be smaller than K (" +
                        std::to_string(num_clients) + ")");
  }
  std::vector<std::uint64_t> ids(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) ids[i] = i;
  auto rng = make_stream(seed, "new-joiners");
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(gamma);
  std::sort(ids.begin(), ids.end());
  return ids;
}

GlobalTraining train_global(const std::vector<data::ClientShard>& shards, const ExperimentConfig& config,
                            const std::vector<std::uint64_t>& new_joiners, const fed::ClientTrainer& trainer) {
  config.validate();
  const std::set<std::uint64_t> joiners(new_joiners.begin(), new_joiners.end());
  std::vector<data::ClientShard> veteran_shards;
  GlobalTraining out{repr::Encoder::initialize(config.encoder, *std::make_unique<Rng>(
                                                                   make_stream(config.seed, "encoder-init"))),
                     {}, {}, {}, {}};
  for (const auto& s : shards) {
    if (joiners.contains(s.client_id())) {
      out.new_joiners.push_back(s.client_id());
    } else {
      veteran_shards.push_back(s);
      out.veterans.push_back(s.client_id());
    }
  }
  if (veteran_shards.empty()) throw ContractError("phase 1 needs at least one veteran client");

  mediator::PrototypeRegistry registry(mediator::Teacher(config.teacher),
                                       mediator::make_pool(config.pool_size, config.teacher.input_dim,
                                                           stream_seed(config.seed, "prototype-pool")),
                                       config.prototype_max_cosine);
  for (const auto id : out.veterans) out.prototypes.push_back(registry.register_client(id));

  fed::FederationConfig fc = config.federation;
  fc.num_clients = veteran_shards.size();
  fc.clients_per_round = std::min(fc.clients_per_round, fc.num_clients);
  auto phase1 = fed::run_phase1(veteran_shards, registry, config.encoder, out.global.params(), fc, trainer);
  out.global = repr::Encoder(config.encoder, std::move(phase1.global));
  out.rounds = std::move(phase1.rounds);
  return out;
}

Evaluation evaluate_clients(const std::vector<data::ClientShard>& shards, const data::LabeledDataset& test,
                            const GlobalTraining& global, const ExperimentConfig& config) {
  test.check();
  const std::set<std::uint64_t> joiners(global.new_joiners.begin(), global.new_joiners.end());
  const Tensor test_latents = global.global.encode(test.features);
  std::vector<ClientResult> results(shards.size());
  std::vector<std::optional<ocnf::FlowModel>> flows(shards.size());

  parallel_for(shards.size(), config.threads, [&](std::size_t k) {
    const auto& shard = shards[k];
    ClientResult res;
    res.client_id = shard.client_id();
    res.label = shard.label();
    res.new_joiner = joiners.contains(shard.client_id());
    std::vector<double> scores;
    try {
      switch (config.scorer) {
        case Scorer::kOcnf: {
          auto trained = ocnf::train_ocnf(shard.client_id(), global.global, shard.samples(), config.ocnf);
          scores = ocnf::nll_scores(trained.model, test_latents);
          res.phase2_losses = std::move(trained.log.epoch_losses);
          flows[k].emplace(std::move(trained.model));
          break;
        }
        case Scorer::kGde: {
          const auto g = ocnf::GaussianDensity::fit(global.global.encode(shard.samples()));
          for (std::size_t i = 0; i < test_latents.rows(); ++i) scores.push_back(g.score(test_latents.row(i)));
          break;
        }
        case Scorer::kKde: {
          const auto kd = ocnf::KernelDensity::fit(global.global.encode(shard.samples()), config.kde_bandwidth);
          for (std::size_t i = 0; i < test_latents.rows(); ++i) scores.push_back(kd.score(test_latents.row(i)));
          break;
        }
      }
      for (std::size_t i = 0; i < scores.size(); ++i) {
        res.scores.push_back({test.ids[i], test.labels[i] == shard.label(), scores[i]});
      }
      res.auroc = auroc(res.scores);
      res.eer = eer(res.scores);
    } catch (const std::exception& e) {
      throw Error("client " + std::to_string(shard.client_id()) + ": " + e.what());
    }
    results[k] = std::move(res);
  });

  Evaluation ev;
  auto& rep = ev.report;
  rep.scorer = to_string(config.scorer);
  rep.clients = std::move(results);
  std::vector<double> a, e;
  for (const auto& c : rep.clients) {
    a.push_back(c.auroc);
    e.push_back(c.eer);
  }
  rep.auroc = mean_std(a);
  rep.eer = mean_std(e);
  if (!joiners.empty()) {
    rep.veterans = summarize(rep.clients, false);
    rep.new_joiners = summarize(rep.clients, true);
  }
  rep.ablation = config.ablation;
  rep.alpha = config.federation.weights.alpha;
  rep.lambda = config.ocnf.weights.lambda;
  rep.rounds = global.rounds;
  rep.global_checksum = global.global.params().checksum();
  for (auto& f : flows) {
    if (f) ev.flows.push_back(std::move(*f));
  }
  return ev;
}

ExperimentReport run_scalability(const data::DataSplit& split, std::size_t num_clients, std::size_t gamma,
                                 const ExperimentConfig& config) {
  const auto resolved = config.resolved();
  auto shards = data::partition_extreme(split.train, num_clients);
  const auto joiners = gamma == 0 ? std::vector<std::uint64_t>{} : choose_new_joiners(num_clients, gamma, config.seed);
  auto fc = resolved;
  fc.federation.num_clients = num_clients;
  const auto global = train_global(shards, fc, joiners);
  return evaluate_clients(shards, split.test, global, fc).report;
}

ExperimentReport run_one_vs_rest(const data::DataSplit& split, const ExperimentConfig& config) {
  return run_scalability(split, split.train.num_classes, 0, config);
}

ExperimentReport run_ablation(const data::DataSplit& split, const ExperimentConfig& config,
                              const AblationFlags& flags) {
  flags.validate();
  ExperimentConfig c = config;
  c.ablation = flags;
  return run_one_vs_rest(split, c);
}

std::vector<ExperimentReport> run_classifier_swap(const data::DataSplit& split, const ExperimentConfig& config,
                                                  const std::vector<Scorer>& scorers) {
  auto resolved = config.resolved();
  resolved.federation.num_clients = split.train.num_classes;
  auto shards = data::partition_extreme(split.train, split.train.num_classes);
  const auto global = train_global(shards, resolved, {});
  std::vector<ExperimentReport> out;
  for (auto s : scorers) {
    auto c = resolved;
    c.scorer = s;
    out.push_back(evaluate_clients(shards, split.test, global, c).report);
  }
  return out;
}

}  // namespace protofl::eval
