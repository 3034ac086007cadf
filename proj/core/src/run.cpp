#include "protofl/run/run.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "protofl/errors.hpp"
#include "protofl/mediator/mediator.hpp"
#include "protofl/repr/checkpoint.hpp"
#include "protofl/rng.hpp"

namespace protofl::run {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::kSynthetic: return "synthetic";
    case DatasetKind::kTabular: return "tabular";
    case DatasetKind::kIdx: return "idx";
  }
  return "synthetic";
}

// Walks one JSON object, recording every key it consumes so leftovers can be
// reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path, std::vector<std::string>& errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (!j_.is_object()) fail("", "must be an object");
  }
  ~Reader() { finish(); }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  bool has(const std::string& key) const { return j_.is_object() && j_.contains(key); }

  void get(const std::string& key, std::size_t& out) {
    if (const json* v = take(key)) {
      if (v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        out = v->get<std::size_t>();
      } else {
        fail(key, "must be a non-negative integer");
      }
    }
  }
  void get(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      if (v->is_number()) {
        out = v->get<double>();
      } else {
        fail(key, "must be a number");
      }
    }
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (v->is_boolean()) {
        out = v->get<bool>();
      } else {
        fail(key, "must be true or false");
      }
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      if (v->is_string()) {
        out = v->get<std::string>();
      } else {
        fail(key, "must be a string");
      }
    }
  }
  void get(const std::string& key, fs::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }
  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = take(key)) {
      bool ok = v->is_array();
      std::vector<std::size_t> vals;
      if (ok) {
        for (const auto& e : *v) {
          if (!e.is_number_unsigned()) {
            ok = false;
            break;
          }
          vals.push_back(e.get<std::size_t>());
        }
      }
      if (ok) {
        out = std::move(vals);
      } else {
        fail(key, "must be a list of non-negative integers");
      }
    }
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      bool ok = v->is_array();
      std::vector<std::string> vals;
      if (ok) {
        for (const auto& e : *v) {
          if (!e.is_string()) {
            ok = false;
            break;
          }
          vals.push_back(e.get<std::string>());
        }
      }
      if (ok) {
        out = std::move(vals);
      } else {
        fail(key, "must be a list of strings");
      }
    }
  }

  // Nested object, or nullptr when absent.
  std::unique_ptr<Reader> child(const std::string& key) {
    if (const json* v = take(key)) return std::make_unique<Reader>(*v, join(key), errors_);
    return nullptr;
  }

  void fail(const std::string& key, const std::string& what) { errors_.push_back(join(key) + ": " + what); }

 private:
  std::string join(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }
  const json* take(const std::string& key) {
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }
  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) errors_.push_back(join(key) + ": unknown key");
    }
  }

  const json& j_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

diff::OptimizerConfig parse_optimizer(Reader& r, diff::OptimizerConfig cfg) {
  std::string kind = diff::to_string(cfg.kind);
  r.get("kind", kind);
  try {
    const auto k = diff::optimizer_kind_from_string(kind);
    if (k != cfg.kind) {
      cfg = k == diff::OptimizerKind::kRAdam ? diff::OptimizerConfig::radam(cfg.learning_rate)
                                             : diff::OptimizerConfig::sgd(cfg.learning_rate);
    }
  } catch (const ConfigError& e) {
    r.fail("kind", e.what());
  }
  r.get("lr", cfg.learning_rate);
  r.get("momentum", cfg.momentum);
  r.get("beta1", cfg.beta1);
  r.get("beta2", cfg.beta2);
  r.get("weight_decay", cfg.weight_decay);
  r.get("eps", cfg.eps);
  return cfg;
}

json optimizer_json(const diff::OptimizerConfig& c) {
  return {{"kind", diff::to_string(c.kind)}, {"lr", c.learning_rate}, {"momentum", c.momentum},
          {"beta1", c.beta1},                 {"beta2", c.beta2},       {"weight_decay", c.weight_decay},
          {"eps", c.eps}};
}

repr::AugmentPolicy parse_augment(Reader& r, repr::AugmentPolicy p) {
  std::string kind = p.name();
  r.get("kind", kind);
  r.get("sigma", p.sigma);
  r.get("dropout", p.dropout_rate);
  try {
    p = repr::AugmentPolicy::from_name(kind, p.sigma, p.dropout_rate);
  } catch (const ConfigError& e) {
    r.fail("kind", e.what());
  }
  return p;
}

json augment_json(const repr::AugmentPolicy& p) {
  return {{"kind", p.name()}, {"sigma", p.sigma}, {"dropout", p.dropout_rate}};
}

void collect(std::vector<std::string>& errors, const std::function<void()>& check) {
  try {
    check();
  } catch (const Error& e) {
    errors.push_back(e.what());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string client_file(const std::string& dir, std::uint64_t id, const std::string& ext) {
  return dir + "/client_" + std::to_string(id) + ext;
}

eval::ExperimentConfig resolved_experiment(const RunConfig& config, const data::DataSplit& split) {
  auto exp = config.experiment;
  exp.encoder.input_dim = split.train.dim();
  exp = exp.resolved();
  exp.federation.num_clients = split.train.num_classes;
  return exp;
}

void check_against_data(const RunConfig& config, const data::DataSplit& split) {
  const std::size_t k = split.train.num_classes;
  std::vector<std::string> errors;
  if (k < 2) errors.push_back("dataset: at least two classes are required, found " + std::to_string(k));
  if (config.gamma >= k) {
    errors.push_back("gamma: " + std::to_string(config.gamma) + " must be smaller than the client count " +
                     std::to_string(k));
  } else if (config.experiment.federation.clients_per_round > k - config.gamma) {
    errors.push_back("federation.clients_per_round: exceeds the " + std::to_string(k - config.gamma) +
                     " phase-1 clients");
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

}  // namespace

std::string hex_hash(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void RunConfig::validate() const {
  std::vector<std::string> errors;
  const auto& d = dataset;
  switch (d.kind) {
    case DatasetKind::kSynthetic:
      if (d.classes < 2) errors.push_back("dataset.classes: must be at least 2");
      if (d.per_class < 2) errors.push_back("dataset.per_class: must be at least 2");
      if (d.dim < d.classes) errors.push_back("dataset.dim: must be at least the class count");
      if (!(d.separation > 0.0)) errors.push_back("dataset.separation: must be positive");
      if (gamma >= d.classes && d.classes >= 2) errors.push_back("gamma: must be smaller than the client count");
      if (d.classes > gamma && experiment.federation.clients_per_round > d.classes - gamma) {
        errors.push_back("federation.clients_per_round: exceeds the phase-1 client count");
      }
      break;
    case DatasetKind::kTabular:
      if (d.path.empty()) {
        errors.push_back("dataset.path: required for tabular data");
      } else if (!fs::is_regular_file(d.path)) {
        errors.push_back("dataset.path: no such file '" + d.path.string() + "'");
      }
      if (d.tabular.label_column.empty()) errors.push_back("dataset.label_column: required for tabular data");
      break;
    case DatasetKind::kIdx: {
      const std::pair<const char*, const fs::path*> files[] = {{"train_images", &d.train_images},
                                                               {"train_labels", &d.train_labels},
                                                               {"test_images", &d.test_images},
                                                               {"test_labels", &d.test_labels}};
      for (std::size_t i = 0; i < 4; ++i) {
        const auto& [name, p] = files[i];
        if (p->empty()) {
          if (i < 2) errors.push_back(std::string("dataset.") + name + ": required for idx data");
        } else if (!fs::is_regular_file(*p)) {
          errors.push_back(std::string("dataset.") + name + ": no such file '" + p->string() + "'");
        }
      }
      if (d.test_images.empty() != d.test_labels.empty()) {
        errors.push_back("dataset: test_images and test_labels must be given together");
      }
      break;
    }
  }
  if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) {
    errors.push_back("dataset.train_fraction: must be in (0, 1)");
  }
  if (output_dir.empty()) errors.push_back("output_dir: must not be empty");

  auto exp = experiment;
  exp.encoder.input_dim = std::max<std::size_t>(exp.encoder.input_dim, 1);
  // The client count comes from the data; it is checked once that is loaded.
  exp.federation.num_clients = std::max<std::size_t>(exp.federation.clients_per_round, 1);
  collect(errors, [&] { exp.encoder.validate(); });
  collect(errors, [&] { exp.teacher.validate(); });
  collect(errors, [&] { exp.ablation.validate(); });
  // Sub-configs stop at their first failing group, so check the parts separately.
  auto fed_only = exp.federation;
  fed_only.optimizer = diff::OptimizerConfig{};
  fed_only.weights = losses::Phase1Weights{};
  fed_only.augment = repr::AugmentPolicy{};
  collect(errors, [&] { fed_only.validate(); });
  collect(errors, [&] { exp.federation.optimizer.validate(); });
  collect(errors, [&] { exp.federation.weights.validate(); });
  collect(errors, [&] { exp.federation.augment.validate(); });
  auto ocnf_only = exp.ocnf;
  ocnf_only.optimizer = diff::OptimizerConfig{};
  ocnf_only.weights = losses::Phase2Weights{};
  ocnf_only.augment = repr::AugmentPolicy{};
  collect(errors, [&] { ocnf_only.validate(); });
  collect(errors, [&] { exp.ocnf.optimizer.validate(); });
  collect(errors, [&] { exp.ocnf.weights.validate(); });
  collect(errors, [&] { exp.ocnf.augment.validate(); });
  if (exp.teacher.output_dim != exp.encoder.output_dim || exp.ocnf.flow.dim != exp.encoder.output_dim) {
    errors.push_back("encoder.latent_dim: teacher and flow widths must match it");
  }
  if (exp.pool_size == 0) errors.push_back("mediator.pool_size: must be positive");
  if (!(exp.prototype_max_cosine > 0.0 && exp.prototype_max_cosine <= 1.0)) {
    errors.push_back("mediator.max_abs_cosine: must be in (0, 1]");
  }
  if (exp.threads == 0) errors.push_back("threads: must be positive");

  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

json RunConfig::to_json() const {
  const auto& e = experiment;
  json ds = {{"kind", kind_name(dataset.kind)},
             {"train_fraction", dataset.train_fraction},
             {"scale", dataset.scale}};
  switch (dataset.kind) {
    case DatasetKind::kSynthetic:
      ds["classes"] = dataset.classes;
      ds["per_class"] = dataset.per_class;
      ds["dim"] = dataset.dim;
      ds["separation"] = dataset.separation;
      break;
    case DatasetKind::kTabular:
      ds["path"] = dataset.path.generic_string();
      ds["label_column"] = dataset.tabular.label_column;
      ds["drop_columns"] = dataset.tabular.drop_columns;
      ds["delimiter"] = std::string(1, dataset.tabular.delimiter);
      break;
    case DatasetKind::kIdx:
      ds["train_images"] = dataset.train_images.generic_string();
      ds["train_labels"] = dataset.train_labels.generic_string();
      if (!dataset.test_images.empty()) {
        ds["test_images"] = dataset.test_images.generic_string();
        ds["test_labels"] = dataset.test_labels.generic_string();
      }
      break;
  }
  return {
      {"seed", e.seed},
      {"gamma", gamma},
      {"scorer", eval::to_string(e.scorer)},
      {"kde_bandwidth", e.kde_bandwidth},
      {"dataset", ds},
      {"encoder", {{"hidden", e.encoder.hidden_dims}, {"latent_dim", e.encoder.output_dim}, {"groups", e.encoder.groups}}},
      {"mediator",
       {{"teacher_input_dim", e.teacher.input_dim},
        {"teacher_hidden", e.teacher.hidden_dim},
        {"output_scale", e.teacher.output_scale},
        {"teacher_seed", e.teacher.seed},
        {"pool_size", e.pool_size},
        {"max_abs_cosine", e.prototype_max_cosine}}},
      {"federation",
       {{"rounds", e.federation.rounds},
        {"local_epochs", e.federation.local_epochs},
        {"clients_per_round", e.federation.clients_per_round},
        {"batch_size", e.federation.batch_size},
        {"optimizer", optimizer_json(e.federation.optimizer)},
        {"augment", augment_json(e.federation.augment)}}},
      {"flow",
       {{"layers", e.ocnf.flow.layers},
        {"hidden", e.ocnf.flow.hidden_dims},
        {"scale_clamp", e.ocnf.flow.scale_clamp},
        {"epochs", e.ocnf.epochs},
        {"batch_size", e.ocnf.batch_size},
        {"optimizer", optimizer_json(e.ocnf.optimizer)},
        {"augment", augment_json(e.ocnf.augment)}}},
      {"loss",
       {{"alpha", e.federation.weights.alpha},
        {"lambda", e.ocnf.weights.lambda},
        {"temperature", e.federation.weights.temperature}}},
      {"ablation", {{"pd", e.ablation.use_pd}, {"p", e.ablation.use_p}, {"reg", e.ablation.use_reg}}},
  };
}

std::uint64_t RunConfig::hash() const { return fnv1a(to_json().dump()); }

RunConfig parse_config(const json& j) {
  RunConfig c;
  auto& e = c.experiment;
  std::vector<std::string> errors;
  {
    Reader root(j, "", errors);
    root.get("seed", e.seed);
    root.get("threads", e.threads);
    root.get("gamma", c.gamma);
    root.get("output_dir", c.output_dir);
    std::string scorer = eval::to_string(e.scorer);
    root.get("scorer", scorer);
    try {
      e.scorer = eval::scorer_from_string(scorer);
    } catch (const ConfigError& err) {
      root.fail("scorer", err.what());
    }
    root.get("kde_bandwidth", e.kde_bandwidth);

    if (auto r = root.child("dataset")) {
      auto& d = c.dataset;
      std::string kind = "synthetic";
      r->get("kind", kind);
      if (kind == "synthetic") {
        d.kind = DatasetKind::kSynthetic;
      } else if (kind == "tabular") {
        d.kind = DatasetKind::kTabular;
      } else if (kind == "idx") {
        d.kind = DatasetKind::kIdx;
      } else {
        r->fail("kind", "unknown dataset kind '" + kind + "' (expected synthetic, tabular or idx)");
      }
      d.scale = d.kind == DatasetKind::kTabular;
      r->get("train_fraction", d.train_fraction);
      r->get("scale", d.scale);
      if (d.kind == DatasetKind::kSynthetic) {
        r->get("classes", d.classes);
        r->get("per_class", d.per_class);
        r->get("dim", d.dim);
        r->get("separation", d.separation);
      } else if (d.kind == DatasetKind::kTabular) {
        r->get("path", d.path);
        r->get("label_column", d.tabular.label_column);
        r->get("drop_columns", d.tabular.drop_columns);
        std::string delim(1, d.tabular.delimiter);
        r->get("delimiter", delim);
        if (delim.size() == 1) {
          d.tabular.delimiter = delim[0];
        } else {
          r->fail("delimiter", "must be a single character");
        }
      } else {
        r->get("train_images", d.train_images);
        r->get("train_labels", d.train_labels);
        r->get("test_images", d.test_images);
        r->get("test_labels", d.test_labels);
      }
    }
    if (auto r = root.child("encoder")) {
      r->get("hidden", e.encoder.hidden_dims);
      r->get("latent_dim", e.encoder.output_dim);
      r->get("groups", e.encoder.groups);
    }
    e.teacher.output_dim = e.encoder.output_dim;
    e.ocnf.flow.dim = e.encoder.output_dim;
    if (auto r = root.child("mediator")) {
      r->get("teacher_input_dim", e.teacher.input_dim);
      r->get("teacher_hidden", e.teacher.hidden_dim);
      r->get("output_scale", e.teacher.output_scale);
      r->get("teacher_seed", e.teacher.seed);
      r->get("pool_size", e.pool_size);
      r->get("max_abs_cosine", e.prototype_max_cosine);
    }
    if (auto r = root.child("federation")) {
      auto& f = e.federation;
      r->get("rounds", f.rounds);
      r->get("local_epochs", f.local_epochs);
      r->get("clients_per_round", f.clients_per_round);
      r->get("batch_size", f.batch_size);
      if (auto o = r->child("optimizer")) f.optimizer = parse_optimizer(*o, f.optimizer);
      if (auto a = r->child("augment")) f.augment = parse_augment(*a, f.augment);
    }
    if (auto r = root.child("flow")) {
      auto& o = e.ocnf;
      r->get("layers", o.flow.layers);
      r->get("hidden", o.flow.hidden_dims);
      r->get("scale_clamp", o.flow.scale_clamp);
      r->get("epochs", o.epochs);
      r->get("batch_size", o.batch_size);
      if (auto op = r->child("optimizer")) o.optimizer = parse_optimizer(*op, o.optimizer);
      if (auto a = r->child("augment")) o.augment = parse_augment(*a, o.augment);
    }
    if (auto r = root.child("loss")) {
      r->get("alpha", e.federation.weights.alpha);
      r->get("lambda", e.ocnf.weights.lambda);
      r->get("temperature", e.federation.weights.temperature);
    }
    if (auto r = root.child("ablation")) {
      r->get("pd", e.ablation.use_pd);
      r->get("p", e.ablation.use_p);
      r->get("reg", e.ablation.use_reg);
    }
    if (c.dataset.kind == DatasetKind::kSynthetic) e.encoder.input_dim = c.dataset.dim;
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& err : errors) msg += "\n  " + err;
    // Range checks on the fields that did parse, so one pass reports everything.
    try {
      c.validate();
    } catch (const ConfigError& e) {
      const std::string more = e.what();
      if (const auto nl = more.find('\n'); nl != std::string::npos) msg += more.substr(nl);
    }
    throw ConfigError(msg);
  }
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

OutputDir::OutputDir(const fs::path& root) : root_(fs::weakly_canonical(fs::absolute(root))) {}

fs::path OutputDir::resolve(const fs::path& relative) const {
  if (relative.is_absolute()) throw ContractError("output path must be relative: " + relative.string());
  const fs::path p = fs::weakly_canonical(root_ / relative);
  const auto [root_end, _] = std::mismatch(root_.begin(), root_.end(), p.begin(), p.end());
  if (root_end != root_.end() || p == root_) {
    throw ContractError("refusing to write outside the output directory: " + relative.string());
  }
  return p;
}

void OutputDir::write_text(const fs::path& relative, const std::string& text) const {
  const fs::path target = resolve(relative);
  fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out << text;
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

LoadedData load_data(const RunConfig& config) {
  const auto& d = config.dataset;
  const std::uint64_t seed = config.experiment.seed;
  LoadedData out;
  switch (d.kind) {
    case DatasetKind::kSynthetic: {
      auto all = data::gen_synthetic_blobs(d.classes, d.per_class, d.dim, d.separation, stream_seed(seed, "dataset"));
      out.split = data::split_per_class(all, d.train_fraction, stream_seed(seed, "split"));
      break;
    }
    case DatasetKind::kTabular: {
      auto all = data::load_tabular(d.path, d.tabular);
      out.split = data::split_per_class(all, d.train_fraction, stream_seed(seed, "split"));
      break;
    }
    case DatasetKind::kIdx: {
      auto train = data::load_idx_images(d.train_images, d.train_labels);
      if (d.test_images.empty()) {
        out.split = data::split_per_class(train, d.train_fraction, stream_seed(seed, "split"));
      } else {
        auto test = data::load_idx_images(d.test_images, d.test_labels);
        const std::size_t classes = std::max(train.num_classes, test.num_classes);
        train.num_classes = test.num_classes = classes;
        // Test ids continue after the training ids so they stay unique.
        for (auto& id : test.ids) id += train.size();
        out.split = {std::move(train), std::move(test)};
      }
      break;
    }
  }
  if (d.scale) {
    auto scaler = data::MinMaxScaler::fit(out.split.train.features);
    out.split.train.features = scaler.transform(out.split.train.features);
    out.split.test.features = scaler.transform(out.split.test.features);
    out.scaler = std::move(scaler);
  }
  return out;
}

RunOutcome run(const RunConfig& config) {
  config.validate();
  const std::uint64_t hash = config.hash();
  auto loaded = load_data(config);
  check_against_data(config, loaded.split);
  const auto exp = resolved_experiment(config, loaded.split);
  exp.validate();
  const std::size_t k = loaded.split.train.num_classes;
  spdlog::info("run {}: {} clients, {} train / {} test samples", hex_hash(hash), k, loaded.split.train.size(),
               loaded.split.test.size());

  const auto shards = data::partition_extreme(loaded.split.train, k);
  const auto joiners = config.gamma == 0 ? std::vector<std::uint64_t>{}
                                         : eval::choose_new_joiners(k, config.gamma, exp.seed);
  const auto global = eval::train_global(shards, exp, joiners);
  auto ev = eval::evaluate_clients(shards, loaded.split.test, global, exp);

  RunOutcome outcome;
  outcome.report = ev.report;
  const json config_json = config.to_json();
  const json report = {{"config", config_json}, {"config_hash", hex_hash(hash)}, {"report", ev.report.to_json()}};
  outcome.report_json = report.dump(2) + "\n";

  // All compute succeeded; only now touch the file system.
  const OutputDir out(config.output_dir);
  fs::create_directories(out.root());
  auto write = [&](const std::string& rel, const std::string& text) {
    out.write_text(rel, text);
    outcome.artifacts.push_back(rel);
  };
  write("config.json", json{{"config", config_json}, {"config_hash", hex_hash(hash)}}.dump(2) + "\n");
  write("report.json", outcome.report_json);
  write("report.csv", "# config_hash " + hex_hash(hash) + "\n" + ev.report.to_csv());

  auto save_ckpt = [&](const std::string& rel, const std::string& kind, const repr::ParamVector& params) {
    const auto p = out.resolve(rel);
    fs::create_directories(p.parent_path());
    repr::save_checkpoint(p, {kind, hash, params});
    outcome.artifacts.push_back(rel);
  };
  save_ckpt("encoder.ckpt", "encoder", global.global.params());
  json manifest = {{"config", config_json},
                   {"config_hash", hex_hash(hash)},
                   {"encoder_checkpoint", "encoder.ckpt"},
                   {"veterans", global.veterans},
                   {"new_joiners", global.new_joiners},
                   {"flows", json::array()},
                   {"prototypes", json::array()}};
  for (std::size_t i = 0; i < ev.flows.size(); ++i) {
    const auto rel = client_file("flows", shards[i].client_id(), ".ckpt");
    save_ckpt(rel, "flow", ev.flows[i].params());
    manifest["flows"].push_back(rel);
  }
  for (const auto& p : global.prototypes) {
    const auto rel = client_file("prototypes", p.client_id, ".proto");
    const auto path = out.resolve(rel);
    fs::create_directories(path.parent_path());
    mediator::save_prototype(path, p, hash);
    outcome.artifacts.push_back(rel);
    manifest["prototypes"].push_back(rel);
  }
  if (loaded.scaler) {
    write("scaler.json",
          json{{"config_hash", hex_hash(hash)}, {"scaler", json::parse(loaded.scaler->to_json())}}.dump(2) + "\n");
    manifest["scaler"] = "scaler.json";
  }
  json rounds = json::array();
  for (const auto& r : global.rounds) {
    rounds.push_back({{"round", r.round},
                      {"participants", r.participants},
                      {"sample_counts", r.sample_counts},
                      {"final_losses", r.final_losses},
                      {"checksum", hex_hash(r.checksum)}});
  }
  manifest["rounds"] = std::move(rounds);
  write("manifest.json", manifest.dump(2) + "\n");
  return outcome;
}

std::vector<fs::path> score_dump(const fs::path& run_dir) {
  const OutputDir out(run_dir);
  const auto config_path = out.root() / "config.json";
  if (!fs::is_regular_file(config_path)) throw FormatError("missing " + config_path.string());
  json stored;
  try {
    stored = json::parse(read_file(config_path));
  } catch (const json::parse_error& e) {
    throw FormatError(config_path.string() + ": " + e.what());
  }
  if (!stored.contains("config") || !stored.contains("config_hash")) {
    throw FormatError(config_path.string() + ": missing config or config_hash");
  }
  const RunConfig config = parse_config(stored.at("config"));
  const std::uint64_t hash = config.hash();
  if (stored.at("config_hash") != hex_hash(hash)) {
    throw FormatError("config.json hash does not match its config; refusing to continue");
  }
  auto check_hash = [&](std::uint64_t h, const fs::path& p) {
    if (h != hash) {
      throw FormatError(p.string() + " was written by config " + hex_hash(h) + ", expected " + hex_hash(hash));
    }
  };
  auto load = [&](const fs::path& rel, const std::string& kind) {
    const auto p = out.root() / rel;
    if (!fs::is_regular_file(p)) throw FormatError("missing checkpoint " + p.string());
    auto ckpt = repr::load_checkpoint(p);
    check_hash(ckpt.config_hash, p);
    if (ckpt.kind != kind) throw FormatError(p.string() + ": expected a " + kind + " checkpoint, found " + ckpt.kind);
    return ckpt;
  };

  auto loaded = load_data(config);
  const auto exp = resolved_experiment(config, loaded.split);
  const repr::Encoder encoder(exp.encoder, load("encoder.ckpt", "encoder").params);
  const auto& test = loaded.split.test;
  const auto latents = encoder.encode(test.features);
  const std::size_t k = loaded.split.train.num_classes;
  const auto shards = data::partition_extreme(loaded.split.train, k);

  std::vector<fs::path> written;
  for (const auto& shard : shards) {
    std::vector<double> scores;
    switch (exp.scorer) {
      case eval::Scorer::kOcnf: {
        const ocnf::FlowModel flow(exp.ocnf.flow, load(client_file("flows", shard.client_id(), ".ckpt"), "flow").params);
        scores = ocnf::nll_scores(flow, latents);
        break;
      }
      case eval::Scorer::kGde: {
        const auto g = ocnf::GaussianDensity::fit(encoder.encode(shard.samples()));
        for (std::size_t i = 0; i < latents.rows(); ++i) scores.push_back(g.score(latents.row(i)));
        break;
      }
      case eval::Scorer::kKde: {
        const auto kd = ocnf::KernelDensity::fit(encoder.encode(shard.samples()), exp.kde_bandwidth);
        for (std::size_t i = 0; i < latents.rows(); ++i) scores.push_back(kd.score(latents.row(i)));
        break;
      }
    }
    std::ostringstream os;
    os << "# config_hash " << hex_hash(hash) << "\nsample_id,label,is_target,score\n";
    for (std::size_t i = 0; i < scores.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", scores[i]);
      os << test.ids[i] << ',' << test.labels[i] << ',' << (test.labels[i] == shard.label() ? 1 : 0) << ',' << buf << '\n';
    }
    const auto rel = client_file("scores", shard.client_id(), ".csv");
    out.write_text(rel, os.str());
    written.push_back(out.resolve(rel));
  }
  return written;
}

}  // namespace protofl::run
