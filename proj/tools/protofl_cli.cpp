#include <chrono>
#include <cstdlib>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "protofl/errors.hpp"
#include "protofl/eval/gradcheck.hpp"
#include "protofl/run/run.hpp"

namespace {

constexpr const char* kOutEnv = "PROTOFL_OUT_DIR";

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> ablate;
  std::optional<std::size_t> gamma;
  std::optional<std::size_t> clients_per_round;
  std::optional<std::size_t> threads;
};

protofl::run::RunConfig build_config(const RunArgs& a) {
  auto cfg = a.config.empty() ? protofl::run::parse_config(nlohmann::json::object())
                              : protofl::run::load_config(a.config);
  if (a.seed) cfg.experiment.seed = *a.seed;
  if (const char* env = std::getenv(kOutEnv); env && *env) cfg.output_dir = env;
  if (!a.out.empty()) cfg.output_dir = a.out;
  for (const auto& term : a.ablate) {
    if (term == "pd") {
      cfg.experiment.ablation.use_pd = false;
    } else if (term == "p") {
      cfg.experiment.ablation.use_p = false;
    } else if (term == "reg") {
      cfg.experiment.ablation.use_reg = false;
    }
  }
  if (a.gamma) cfg.gamma = *a.gamma;
  if (a.clients_per_round) cfg.experiment.federation.clients_per_round = *a.clients_per_round;
  if (a.threads) cfg.experiment.threads = *a.threads;
  return cfg;
}

int cmd_run(const RunArgs& a) {
  const auto cfg = build_config(a);
  const auto t0 = std::chrono::steady_clock::now();
  const auto outcome = protofl::run::run(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& r = outcome.report;
  std::cout << "config " << protofl::run::hex_hash(cfg.hash()) << "\n";
  for (const auto& c : r.clients) {
    std::printf("client %3llu  label %3d  %s  auroc %.4f  eer %.4f\n", static_cast<unsigned long long>(c.client_id),
                c.label, c.new_joiner ? "new    " : "veteran", c.auroc, c.eer);
  }
  std::printf("mean auroc %.4f (std %.4f)  mean eer %.4f (std %.4f)\n", r.auroc.mean, r.auroc.std, r.eer.mean,
              r.eer.std);
  if (r.veterans && r.new_joiners) {
    std::printf("veterans auroc %.4f  new joiners auroc %.4f\n", r.veterans->auroc.mean, r.new_joiners->auroc.mean);
  }
  std::printf("wrote %zu artifacts to %s in %.1fs\n", outcome.artifacts.size(), cfg.output_dir.string().c_str(),
              secs);
  return 0;
}

int cmd_partition(const std::string& config, const std::string& labels_arg) {
  protofl::data::LabeledDataset train;
  if (!labels_arg.empty()) {
    std::vector<int> labels;
    std::size_t start = 0;
    while (start <= labels_arg.size()) {
      const auto end = std::min(labels_arg.find(',', start), labels_arg.size());
      const std::string tok = labels_arg.substr(start, end - start);
      std::size_t used = 0;
      int v = -1;
      try {
        v = std::stoi(tok, &used);
      } catch (const std::exception&) {
      }
      if (used != tok.size() || v < 0) throw protofl::ConfigError("--labels: bad label '" + tok + "'");
      labels.push_back(v);
      start = end + 1;
    }
    train.features = protofl::diff::Tensor(protofl::diff::Shape{labels.size(), 1});
    train.labels = labels;
    for (std::size_t i = 0; i < labels.size(); ++i) train.ids.push_back(i);
    train.num_classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  } else {
    auto cfg = config.empty() ? protofl::run::parse_config(nlohmann::json::object())
                              : protofl::run::load_config(config);
    cfg.validate();
    train = protofl::run::load_data(cfg).split.train;
  }
  const auto shards = protofl::data::partition_extreme(train, train.num_classes);
  std::size_t total = 0;
  for (const auto& s : shards) {
    std::printf("client %llu  label %d  samples %zu\n", static_cast<unsigned long long>(s.client_id()), s.label(),
                s.cardinality());
    total += s.cardinality();
  }
  std::printf("clients %zu  samples %zu\n", shards.size(), total);
  return 0;
}

int cmd_gradcheck(std::size_t seeds, double step) {
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < seeds; ++i) ids.push_back(i);
  std::map<std::string, double> worst;
  double overall = 0.0;
  for (const auto& r : protofl::eval::run_gradcheck_suite(ids, step)) {
    worst[r.name] = std::max(worst[r.name], r.max_rel_error);
    overall = std::max(overall, r.max_rel_error);
  }
  for (const auto& [name, err] : worst) std::printf("%-12s max relative error %.3e\n", name.c_str(), err);
  std::printf("max relative error %.3e over %zu seeds\n", overall, seeds);
  return overall < 1e-3 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated one-class training and evaluation"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Phase 1, phase 2 and evaluation; writes report and checkpoints");
  run->add_option("--config", run_args.config, "JSON config file (defaults when omitted)")->check(CLI::ExistingFile);
  run->add_option("--seed", run_args.seed, "Override the master seed");
  run->add_option("--out", run_args.out, std::string("Output directory (overrides ") + kOutEnv + " and the config)");
  run->add_option("--ablate", run_args.ablate, "Disable a loss term: pd, p or reg (repeatable)")
      ->check(CLI::IsMember({"pd", "p", "reg"}))
      ->take_all();
  run->add_option("--gamma", run_args.gamma, "Number of new-joiner clients");
  run->add_option("--clients-per-round", run_args.clients_per_round, "Phase-1 participants per round (0 = all)");
  run->add_option("--threads", run_args.threads, "Worker threads");

  std::string part_config, part_labels;
  auto* part = app.add_subcommand("partition-inspect", "Print client shard sizes and labels");
  part->add_option("--config", part_config, "JSON config file")->check(CLI::ExistingFile);
  part->add_option("--labels", part_labels, "Comma-separated labels, e.g. 0,0,1");

  std::size_t gc_seeds = 5;
  double gc_step = 1e-4;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  gc->add_option("--seeds", gc_seeds, "Number of seeds")->check(CLI::PositiveNumber);
  gc->add_option("--step", gc_step, "Finite-difference step")->check(CLI::PositiveNumber);

  std::string dump_dir;
  auto* dump = app.add_subcommand("score-dump", "Write per-sample scores of a finished run");
  dump->add_option("--run", dump_dir, "Output directory of the run")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

  try {
    if (*run) return cmd_run(run_args);
    if (*part) return cmd_partition(part_config, part_labels);
    if (*gc) return cmd_gradcheck(gc_seeds, gc_step);
    if (*dump) {
      for (const auto& p : protofl::run::score_dump(dump_dir)) std::cout << p.string() << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
