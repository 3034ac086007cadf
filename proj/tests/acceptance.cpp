// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. `--only 3 4` restricts the run to the listed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "protofl/data/datasets.hpp"
#include "protofl/eval/experiments.hpp"
#include "protofl/eval/gradcheck.hpp"
#include "protofl/eval/metrics.hpp"
#include "protofl/fed/fedengine.hpp"
#include "protofl/ocnf/flow.hpp"
#include "protofl/rng.hpp"
#include "protofl/run/run.hpp"

using namespace protofl;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = fs::path(PROTOFL_SOURCE_DIR) / "configs";
constexpr std::uint64_t kSeeds[] = {0, 1, 2, 3, 4};

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : " ") + fmt("%.3f", x);
  return s;
}

struct Benchmark {
  run::RunConfig config;
  data::DataSplit split;
};

Benchmark load_benchmark(const std::string& file, std::uint64_t seed) {
  Benchmark b{run::load_config(kConfigDir / file), {}};
  b.config.experiment.seed = seed;
  b.config.validate();
  b.split = run::load_data(b.config).split;
  return b;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  Clock clock;
  const auto results = eval::run_gradcheck_suite({0, 1, 2, 3, 4}, 1e-4);
  double worst = 0.0;
  std::string worst_name;
  std::set<std::string> names;
  for (const auto& r : results) {
    names.insert(r.name);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  const double secs = clock.seconds();
  return {worst < 1e-3 && secs < 60.0,
          fmt("%zu objectives x 5 seeds, max rel error %.2e (%s), %.1fs", names.size(), worst, worst_name.c_str(),
              secs)};
}

ocnf::FlowModel perturbed_flow(std::size_t dim, std::size_t layers, std::uint64_t seed, double sd) {
  ocnf::FlowConfig c;
  c.dim = dim;
  c.layers = layers;
  c.hidden_dims = {16, 16};
  Rng rng(seed);
  auto m = ocnf::FlowModel::initialize(c, rng);
  std::normal_distribution<double> nd(0.0, sd);
  for (auto& v : m.mutable_params().values()) v += nd(rng);
  return m;
}

double log_abs_det(std::vector<double> a, std::size_t n) {
  // Gaussian elimination with partial pivoting.
  double logdet = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[p * n + c])) p = r;
    if (p != c)
      for (std::size_t k = 0; k < n; ++k) std::swap(a[c * n + k], a[p * n + k]);
    logdet += std::log(std::abs(a[c * n + c]));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r * n + c] / a[c * n + c];
      for (std::size_t k = c; k < n; ++k) a[r * n + k] -= f * a[c * n + k];
    }
  }
  return logdet;
}

Outcome flow_correctness() {
  Clock clock;
  double round_trip = 0.0;
  for (std::uint64_t seed : {1u, 2u}) {
    const auto m = perturbed_flow(8, 8, seed, 0.3);
    std::mt19937_64 g(seed);
    std::normal_distribution<double> nd(0.0, 2.0);
    diff::Tensor r(diff::Shape{1000, 8});
    for (auto& v : r.data()) v = nd(g);
    const auto back = m.flow_forward(m.flow_inverse(r).z);
    for (std::size_t i = 0; i < r.size(); ++i) round_trip = std::max(round_trip, std::abs(back[i] - r[i]));
  }

  double jac_err = 0.0;
  for (std::size_t d : {2u, 3u, 4u}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto m = perturbed_flow(d, 8, 10 + seed, 0.3);
      std::mt19937_64 g(seed);
      std::normal_distribution<double> nd;
      diff::Tensor r(diff::Shape{d});
      for (auto& v : r.data()) v = nd(g);
      const double h = 1e-6;
      std::vector<double> jac(d * d);
      for (std::size_t i = 0; i < d; ++i) {
        auto up = r, down = r;
        up[i] += h;
        down[i] -= h;
        const auto zu = m.flow_inverse(up).z, zd = m.flow_inverse(down).z;
        for (std::size_t o = 0; o < d; ++o) jac[o * d + i] = (zu[o] - zd[o]) / (2 * h);
      }
      jac_err = std::max(jac_err, std::abs(m.flow_inverse(r).logdet.item() - log_abs_det(jac, d)));
    }
  }

  double quad_err = 0.0;
  for (std::uint64_t seed : {3u, 4u}) {
    const auto m = perturbed_flow(2, 8, seed, 0.2);
    const double lo = -12.0, h = 0.04;
    const std::size_t n = 600;
    diff::Tensor grid(diff::Shape{n * n, 2});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        grid.at(i * n + j, 0) = lo + (i + 0.5) * h;
        grid.at(i * n + j, 1) = lo + (j + 0.5) * h;
      }
    const auto inv = m.flow_inverse(grid);
    double mass = 0.0;
    for (std::size_t k = 0; k < n * n; ++k) {
      const double a = inv.z.at(k, 0), b = inv.z.at(k, 1);
      mass += std::exp(-(a * a + b * b) / 2 + inv.logdet[k]) / (2 * std::numbers::pi);
    }
    quad_err = std::max(quad_err, std::abs(mass * h * h - 1.0));
  }
  const double secs = clock.seconds();
  return {round_trip < 1e-9 && jac_err < 1e-5 && quad_err < 0.02 && secs < 120.0,
          fmt("round trip %.1e over 2x1000 vectors, logdet vs Jacobian %.1e at D<=4, quadrature |mass-1| %.1e, "
              "%.1fs",
              round_trip, jac_err, quad_err, secs)};
}

Outcome fedavg_exactness() {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> nd(0.0, 3.0);
  double worst = 0.0;
  bool saw_single = false, saw_skewed = false;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = t < 10 ? 1 : 1 + rng() % 12;
    const std::size_t n = 1 + rng() % 40;
    std::vector<repr::ParamVector> ps;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < k; ++i) {
      std::vector<double> v(n);
      for (auto& x : v) x = nd(rng);
      ps.emplace_back(repr::ParamLayout({{"w", {n}}}), std::move(v));
      const bool skew = t % 4 == 0 && i == 0;
      counts.push_back(skew ? 1000000 : 1 + rng() % 50);
    }
    saw_single = saw_single || k == 1;
    saw_skewed = saw_skewed || (t % 4 == 0 && k > 1);
    const auto out = fed::fedavg(ps, counts);
    long double total = 0;
    for (auto c : counts) total += c;
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0;
      for (std::size_t i = 0; i < k; ++i) acc += static_cast<long double>(counts[i]) / total * ps[i].values()[j];
      worst = std::max(worst, std::abs(out.values()[j] - static_cast<double>(acc)));
      if (k == 1 && out.values()[j] != ps[0].values()[j]) worst = INFINITY;
    }
  }
  return {worst <= 1e-12 && saw_single && saw_skewed,
          fmt("100 cases (10 with K=1, skewed counts up to 1e6), max abs deviation %.1e", worst)};
}

std::vector<eval::ScoredExample> random_scored(std::mt19937_64& rng, std::size_t n, int levels) {
  std::vector<eval::ScoredExample> v;
  std::uniform_int_distribution<int> lvl(0, levels - 1);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < n; ++i) {
    const bool t = coin(rng);
    v.push_back({i, t, lvl(rng) + (t ? 0.0 : 0.25 * levels)});
  }
  v[0].is_target = true;
  v[1].is_target = false;
  return v;
}

double auroc_pairs(const std::vector<eval::ScoredExample>& v) {
  double good = 0, pairs = 0;
  for (const auto& t : v)
    for (const auto& n : v)
      if (t.is_target && !n.is_target) {
        pairs += 1;
        good += n.score > t.score ? 1.0 : (n.score == t.score ? 0.5 : 0.0);
      }
  return good / pairs;
}

double eer_sweep(const std::vector<eval::ScoredExample>& v) {
  std::vector<double> th{-INFINITY};
  for (const auto& e : v) th.push_back(e.score);
  std::sort(th.begin(), th.end());
  th.erase(std::unique(th.begin(), th.end()), th.end());
  double pa = 0, pr = 1;
  for (double t : th) {
    double fa = 0, fr = 0, nt = 0, nn = 0;
    for (const auto& e : v) {
      (e.is_target ? nt : nn) += 1;
      if (e.is_target && e.score > t) fr += 1;
      if (!e.is_target && e.score <= t) fa += 1;
    }
    fa /= nn;
    fr /= nt;
    if (fa == fr) return fa;
    if (fa > fr) {
      const double s = (pr - pa) / ((fa - pa) - (fr - pr));
      return pa + s * (fa - pa);
    }
    pa = fa;
    pr = fr;
  }
  return pa;
}

Outcome metric_oracles() {
  std::mt19937_64 rng(77);
  double auroc_err = 0, eer_err = 0, invariance_err = 0;
  int cases = 0;
  for (std::size_t n = 2; n <= 200; n += 3) {
    for (int levels : {2, 7, 1000}) {
      auto v = random_scored(rng, n, levels);
      ++cases;
      const double a = eval::auroc(v), e = eval::eer(v);
      auroc_err = std::max(auroc_err, std::abs(a - auroc_pairs(v)));
      eer_err = std::max(eer_err, std::abs(e - eer_sweep(v)));
      for (auto& x : v) x.score = std::atan(0.1 * x.score) * 5.0 + 2.0;
      invariance_err = std::max({invariance_err, std::abs(eval::eer(v) - e), std::abs(eval::auroc(v) - a)});
    }
  }
  return {auroc_err <= 1e-12 && eer_err <= 1e-12 && invariance_err <= 1e-12,
          fmt("%d random inputs of size 2..200: auroc dev %.1e, eer dev %.1e, monotone-transform dev %.1e", cases,
              auroc_err, eer_err, invariance_err)};
}

Outcome synthetic_benchmark() {
  auto cfg = run::load_config(kConfigDir / "benchmark.json");
  cfg.output_dir = fs::temp_directory_path() / "protofl-acceptance-benchmark";
  fs::remove_all(cfg.output_dir);
  Clock clock;
  const auto out = run::run(cfg);
  const double secs = clock.seconds();
  fs::remove_all(cfg.output_dir);
  return {out.report.auroc.mean > 0.95 && secs < 300.0,
          fmt("K=%zu, T=%zu: mean AUROC %.4f (std %.4f), mean EER %.4f, %.1fs", out.report.clients.size(),
              out.report.rounds.size(), out.report.auroc.mean, out.report.auroc.std, out.report.eer.mean, secs)};
}

// Criteria 6 and 8 share runs: the full model's OC-NF and GDE scores come from
// one phase-1 training per seed.
struct ReducedSeparation {
  std::vector<double> full, no_pd, no_reg, gde;
  bool same_global = true;
};

const ReducedSeparation& reduced_separation_runs() {
  static const ReducedSeparation r = [] {
    ReducedSeparation out;
    for (auto seed : kSeeds) {
      const auto b = load_benchmark("reduced_separation.json", seed);
      const auto& exp = b.config.experiment;
      const auto swap = eval::run_classifier_swap(b.split, exp, {eval::Scorer::kOcnf, eval::Scorer::kGde});
      out.full.push_back(swap[0].auroc.mean);
      out.gde.push_back(swap[1].auroc.mean);
      out.same_global = out.same_global && swap[0].global_checksum == swap[1].global_checksum;
      out.no_pd.push_back(eval::run_ablation(b.split, exp, {false, true, true}).auroc.mean);
      out.no_reg.push_back(eval::run_ablation(b.split, exp, {true, true, false}).auroc.mean);
      spdlog::info("seed {}: full {:.4f} gde {:.4f} alpha=1 {:.4f} lambda=0 {:.4f}", seed, out.full.back(),
                   out.gde.back(), out.no_pd.back(), out.no_reg.back());
    }
    return out;
  }();
  return r;
}

Outcome ablation_direction() {
  const auto& r = reduced_separation_runs();
  const double full = median(r.full), no_pd = median(r.no_pd), no_reg = median(r.no_reg);
  return {full - no_pd >= 0.05 && full >= no_reg - 0.02,
          fmt("median AUROC over 5 seeds: full %.4f, alpha=1 %.4f (gap %.4f), lambda=0 %.4f [full: %s; alpha=1: %s; "
              "lambda=0: %s]",
              full, no_pd, full - no_pd, no_reg, list(r.full).c_str(), list(r.no_pd).c_str(),
              list(r.no_reg).c_str())};
}

Outcome scalability() {
  const auto b = load_benchmark("benchmark.json", 0);
  const std::size_t k = b.split.train.num_classes;
  const auto report = eval::run_scalability(b.split, k, 2, b.config.experiment);
  const auto joiners = eval::choose_new_joiners(k, 2, b.config.experiment.seed);
  bool absent = true;
  for (const auto& rec : report.rounds)
    for (auto id : rec.participants) absent = absent && !std::count(joiners.begin(), joiners.end(), id);
  const double vet = report.veterans->auroc.mean, fresh = report.new_joiners->auroc.mean;
  return {absent && std::abs(vet - fresh) <= 0.1 && !report.rounds.empty(),
          fmt("new joiners {%llu, %llu}: AUROC %.4f vs veterans %.4f (diff %.4f); absent from all %zu round records: "
              "%s",
              static_cast<unsigned long long>(joiners[0]), static_cast<unsigned long long>(joiners[1]), fresh, vet,
              std::abs(vet - fresh), report.rounds.size(), absent ? "yes" : "no")};
}

Outcome classifier_swap() {
  const auto& r = reduced_separation_runs();
  const double ocnf = median(r.full), gde = median(r.gde);
  return {r.same_global && ocnf >= gde - 0.02,
          fmt("identical global model: %s; median AUROC over 5 seeds: OC-NF %.4f, GDE %.4f (diff %+.4f) [OC-NF: %s; "
              "GDE: %s]",
              r.same_global ? "yes" : "no", ocnf, gde, ocnf - gde, list(r.full).c_str(), list(r.gde).c_str())};
}

Outcome determinism() {
  auto cfg = run::load_config(kConfigDir / "benchmark.json");
  std::vector<std::string> bodies;
  for (std::size_t threads : {1u, 2u, 4u}) {
    cfg.experiment.threads = threads;
    cfg.output_dir = fs::temp_directory_path() / ("protofl-acceptance-det-" + std::to_string(threads));
    fs::remove_all(cfg.output_dir);
    run::run(cfg);
    std::ifstream in(cfg.output_dir / "report.json", std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    bodies.push_back(os.str());
    fs::remove_all(cfg.output_dir);
  }
  const bool same = !bodies[0].empty() && bodies[0] == bodies[1] && bodies[1] == bodies[2];
  return {same, fmt("3 runs with 1, 2 and 4 threads: report.json %s (%zu bytes)",
                    same ? "byte-identical" : "DIFFERS", bodies[0].size())};
}

Outcome data_isolation() {
  auto b = load_benchmark("benchmark.json", 0);
  auto exp = b.config.experiment.resolved();
  exp.threads = 1;  // read counters are attributed to the running client
  const std::size_t k = b.split.train.num_classes;
  exp.federation.num_clients = k;
  const auto shards = data::partition_extreme(b.split.train, k);

  std::vector<std::string> violations;
  std::map<std::size_t, std::set<std::uint64_t>> snapshots;
  std::size_t calls = 0;
  auto note = [&](const std::string& v) {
    if (violations.size() < 5) violations.push_back(v);
  };
  const fed::ClientTrainer trainer = [&](const fed::ClientInputs& in) {
    ++calls;
    const auto id = in.shard.client_id();
    if (in.prototype.client_id != id) note("client " + std::to_string(id) + " got a foreign prototype");
    snapshots[in.round].insert(in.snapshot.checksum());
    std::vector<std::uint64_t> before;
    for (const auto& s : shards) before.push_back(s.read_count());
    auto up = fed::client_training(in, exp.encoder, exp.federation);
    for (std::size_t j = 0; j < shards.size(); ++j) {
      const bool own = shards[j].client_id() == id;
      const auto grew = shards[j].read_count() - before[j];
      if (!own && grew) note("client " + std::to_string(id) + " read shard " + std::to_string(j));
      if (own && !grew) note("client " + std::to_string(id) + " never read its shard");
    }
    return up;
  };
  const auto initial_checksum = [&] {
    Rng rng = make_stream(exp.seed, "encoder-init");
    return repr::Encoder::initialize(exp.encoder, rng).params().checksum();
  }();
  const auto global = eval::train_global(shards, exp, {}, trainer);
  for (std::size_t r = 0; r < global.rounds.size(); ++r) {
    const auto expected = r == 0 ? initial_checksum : global.rounds[r - 1].checksum;
    if (snapshots[r] != std::set<std::uint64_t>{expected}) note("round " + std::to_string(r) + " saw a stale model");
  }

  std::vector<std::uint64_t> before;
  for (const auto& s : shards) before.push_back(s.read_count());
  eval::evaluate_clients(shards, b.split.test, global, exp);
  for (std::size_t j = 0; j < shards.size(); ++j) {
    if (shards[j].read_count() - before[j] != 1) note("phase 2 read shard " + std::to_string(j) + " not exactly once");
  }
  std::string detail = fmt("%zu client trainings over %zu rounds and %zu phase-2 clients audited: ", calls,
                           global.rounds.size(), shards.size());
  if (violations.empty()) {
    detail += "only own shard, own prototype and the current broadcast were read";
  } else {
    for (const auto& v : violations) detail += v + "; ";
  }
  return {violations.empty() && calls > 0, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  bool verbose = false;
  app.add_option("--only", only, "Run only these criteria (1-10)");
  app.add_flag("-v,--verbose", verbose, "Log progress");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"flow correctness", flow_correctness},
      {"fedavg exactness", fedavg_exactness},
      {"auroc/eer oracles", metric_oracles},
      {"synthetic benchmark", synthetic_benchmark},
      {"ablation direction", ablation_direction},
      {"scalability", scalability},
      {"classifier swap", classifier_swap},
      {"determinism", determinism},
      {"data isolation", data_isolation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    Outcome o;
    Clock clock;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d  %-20s %s  %s  [%.1fs]\n", n, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), clock.seconds());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
