#include "protofl/data/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "protofl/errors.hpp"
#include "protofl/rng.hpp"

namespace protofl::data {

void LabeledDataset::check() const {
  if (features.rank() != 2) throw ContractError("dataset features must be rank-2");
  if (features.rows() != labels.size() || ids.size() != labels.size()) {
    throw ContractError("dataset features, labels and ids disagree in length");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw ContractError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

LabeledDataset LabeledDataset::subset(const std::vector<std::size_t>& rows) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.class_names = class_names;
  const std::size_t d = dim();
  std::vector<double> values;
  values.reserve(rows.size() * d);
  for (auto r : rows) {
    const auto row = features.row(r);
    values.insert(values.end(), row.begin(), row.end());
    out.labels.push_back(labels.at(r));
    out.ids.push_back(ids.at(r));
  }
  if (rows.empty()) throw ContractError("empty dataset subset");
  out.features = Tensor::matrix(rows.size(), d, std::move(values));
  return out;
}

ClientShard::ClientShard(std::uint64_t client_id, int label, Tensor samples, std::vector<std::uint64_t> sample_ids)
    : client_id_(client_id),
      label_(label),
      samples_(std::move(samples)),
      ids_(std::move(sample_ids)),
      reads_(std::make_shared<std::atomic<std::uint64_t>>(0)) {
  if (samples_.rank() != 2 || samples_.rows() != ids_.size()) {
    throw ContractError("client shard samples and ids disagree");
  }
}

const Tensor& ClientShard::samples() const {
  reads_->fetch_add(1);
  return samples_;
}

std::vector<ClientShard> partition_extreme(const LabeledDataset& train, std::size_t num_clients) {
  train.check();
  if (num_clients != train.num_classes) {
    throw ConfigError("extreme non-i.i.d. partition needs one client per class: K=" + std::to_string(num_clients) +
                      ", classes=" + std::to_string(train.num_classes));
  }
  std::vector<std::vector<std::size_t>> rows(num_clients);
  for (std::size_t i = 0; i < train.size(); ++i) rows[static_cast<std::size_t>(train.labels[i])].push_back(i);
  std::vector<ClientShard> shards;
  shards.reserve(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) {
    if (rows[k].empty()) throw ContractError("class " + std::to_string(k) + " has no training samples");
    auto sub = train.subset(rows[k]);
    shards.emplace_back(k, static_cast<int>(k), std::move(sub.features), std::move(sub.ids));
  }
  return shards;
}

LabeledDataset gen_synthetic_blobs(std::size_t num_classes, std::size_t per_class, std::size_t dim,
                                   double separation, std::uint64_t seed) {
  if (!(separation > 0.0)) throw ConfigError("blob separation must be > 0");
  if (num_classes < 1 || per_class < 1 || dim < 1) throw ConfigError("blob counts and dim must be positive");
  if (num_classes > dim) {
    throw ConfigError("cannot place " + std::to_string(num_classes) + " equidistant blob means in " +
                      std::to_string(dim) + " dimensions");
  }
  auto rng = make_stream(seed, "blob-means");
  std::normal_distribution<double> n01;
  // Gram-Schmidt on Gaussian vectors gives a random orthonormal frame; means
  // at (separation / sqrt 2) * e_c are pairwise exactly `separation` apart.
  std::vector<std::vector<double>> frame;
  while (frame.size() < num_classes) {
    std::vector<double> v(dim);
    for (auto& x : v) x = n01(rng);
    for (const auto& u : frame) {
      const double d = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
      for (std::size_t j = 0; j < dim; ++j) v[j] -= d * u[j];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-8) continue;
    for (auto& x : v) x /= norm;
    frame.push_back(std::move(v));
  }
  const double radius = separation / std::sqrt(2.0);

  auto sample_rng = make_stream(seed, "blob-samples");
  LabeledDataset out;
  out.num_classes = num_classes;
  std::vector<double> values;
  values.reserve(num_classes * per_class * dim);
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) values.push_back(radius * frame[c][j] + n01(sample_rng));
      out.labels.push_back(static_cast<int>(c));
      out.ids.push_back(out.ids.size());
    }
    out.class_names.push_back("blob" + std::to_string(c));
  }
  out.features = Tensor::matrix(num_classes * per_class, dim, std::move(values));
  return out;
}

DataSplit split_per_class(const LabeledDataset& data, double train_fraction, std::uint64_t seed) {
  data.check();
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must be in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(data.num_classes);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& rows = by_class[c];
    if (rows.empty()) continue;
    auto rng = make_stream(seed, "split", {c});
    std::shuffle(rows.begin(), rows.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows.size())));
    if (rows.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, rows.size() - 1);
    else n_train = rows.size();
    std::sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
    train_rows.insert(train_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_rows.insert(test_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  }
  return {data.subset(train_rows), data.subset(test_rows)};
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, delim)) out.push_back(trim(field));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

}  // namespace

LabeledDataset load_tabular(const std::filesystem::path& path, const TabularOptions& options) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open tabular file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_line(line, options.delimiter);
      break;
    }
  }
  if (header.empty()) throw FormatError(path.string() + ": missing header row");
  std::ptrdiff_t label_col = -1;
  std::vector<std::size_t> feature_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == options.label_column) {
      label_col = static_cast<std::ptrdiff_t>(i);
    } else if (std::find(options.drop_columns.begin(), options.drop_columns.end(), header[i]) ==
               options.drop_columns.end()) {
      feature_cols.push_back(i);
    }
  }
  if (label_col < 0) throw FormatError(path.string() + ": label column '" + options.label_column + "' not in header");
  if (feature_cols.empty()) throw FormatError(path.string() + ": no feature columns");

  std::vector<double> values;
  std::vector<std::string> raw_labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_line(line, options.delimiter);
    if (fields.size() != header.size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    const auto& label = fields[static_cast<std::size_t>(label_col)];
    if (label.empty()) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": empty label");
    raw_labels.push_back(label);
    for (auto c : feature_cols) {
      const auto& f = fields[c];
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(f, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != f.size() || !std::isfinite(v)) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": column '" + header[c] +
                          "' is not a finite number: '" + f + "'");
      }
      values.push_back(v);
    }
  }
  if (raw_labels.empty()) throw FormatError(path.string() + ": no data rows");

  std::map<std::string, int> index;
  for (const auto& l : raw_labels) index.emplace(l, 0);
  LabeledDataset out;
  for (auto& [name, idx] : index) {
    idx = static_cast<int>(out.class_names.size());
    out.class_names.push_back(name);
  }
  out.num_classes = out.class_names.size();
  for (std::size_t i = 0; i < raw_labels.size(); ++i) {
    out.labels.push_back(index.at(raw_labels[i]));
    out.ids.push_back(i);
  }
  out.features = Tensor::matrix(raw_labels.size(), feature_cols.size(), std::move(values));
  return out;
}

MinMaxScaler::MinMaxScaler(std::vector<double> mins, std::vector<double> maxs)
    : mins_(std::move(mins)), maxs_(std::move(maxs)) {
  if (mins_.size() != maxs_.size()) throw DimensionError("scaler min/max lengths differ");
}

MinMaxScaler MinMaxScaler::fit(const Tensor& features) {
  const std::size_t n = features.rows(), d = features.cols();
  std::vector<double> mins(d), maxs(d);
  for (std::size_t j = 0; j < d; ++j) mins[j] = maxs[j] = features.at(0, j);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      mins[j] = std::min(mins[j], features.at(i, j));
      maxs[j] = std::max(maxs[j], features.at(i, j));
    }
  }
  return MinMaxScaler(std::move(mins), std::move(maxs));
}

Tensor MinMaxScaler::transform(const Tensor& features) const {
  if (features.rank() != 2 || features.cols() != mins_.size()) {
    throw DimensionError("scaler fitted on " + std::to_string(mins_.size()) + " features");
  }
  Tensor out = features;
  const std::size_t n = out.rows(), d = out.cols();
  for (std::size_t j = 0; j < d; ++j) {
    const double range = maxs_[j] - mins_[j];
    for (std::size_t i = 0; i < n; ++i) {
      out.at(i, j) = range > 0.0 ? (out.at(i, j) - mins_[j]) / range : 0.0;
    }
  }
  return out;
}

std::string MinMaxScaler::to_json() const {
  nlohmann::json j;
  j["kind"] = "min-max";
  j["min"] = mins_;
  j["max"] = maxs_;
  return j.dump(2);
}

MinMaxScaler MinMaxScaler::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("kind") != "min-max") throw FormatError("scaler kind is not min-max");
    return MinMaxScaler(j.at("min").get<std::vector<double>>(), j.at("max").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed scaler: ") + e.what());
  }
}

void MinMaxScaler::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write scaler to " + path.string());
  os << to_json() << '\n';
}

MinMaxScaler MinMaxScaler::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open scaler " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json(ss.str());
}

namespace {

std::uint32_t read_be32(std::istream& is, const std::filesystem::path& path) {
  const auto offset = static_cast<long long>(is.tellg());
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw FormatError(path.string() + ": truncated header at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

// Reads an IDX header, checks the payload length and returns (dims, payload).
std::pair<std::vector<std::uint32_t>, std::vector<unsigned char>> read_idx(const std::filesystem::path& path,
                                                                           std::uint32_t expected_magic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open IDX file " + path.string());
  const auto magic = read_be32(is, path);
  if (magic != expected_magic) {
    std::ostringstream os;
    os << path.string() << ": bad IDX magic 0x" << std::hex << magic << " at byte offset 0, expected 0x"
       << expected_magic;
    throw FormatError(os.str());
  }
  std::vector<std::uint32_t> dims(magic & 0xff);
  std::uint64_t count = 1;
  for (auto& d : dims) {
    d = read_be32(is, path);
    if (d == 0) throw FormatError(path.string() + ": zero dimension in IDX header");
    count *= d;
  }
  const auto header_end = static_cast<std::uint64_t>(is.tellg());
  is.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(is.tellg());
  if (file_size - header_end != count) {
    throw FormatError(path.string() + ": header promises " + std::to_string(count) + " payload bytes after offset " +
                      std::to_string(header_end) + ", file has " + std::to_string(file_size - header_end));
  }
  is.seekg(static_cast<std::streamoff>(header_end));
  std::vector<unsigned char> payload(count);
  is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(count));
  return {std::move(dims), std::move(payload)};
}

}  // namespace

LabeledDataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels) {
  auto [img_dims, pixels] = read_idx(images, 0x00000803);
  auto [lbl_dims, raw_labels] = read_idx(labels, 0x00000801);
  if (img_dims[0] != lbl_dims[0]) {
    throw FormatError("image count " + std::to_string(img_dims[0]) + " differs from label count " +
                      std::to_string(lbl_dims[0]));
  }
  const std::size_t n = img_dims[0];
  const std::size_t d = static_cast<std::size_t>(img_dims[1]) * img_dims[2];
  std::vector<double> values(pixels.size());
  std::transform(pixels.begin(), pixels.end(), values.begin(), [](unsigned char p) { return p / 255.0; });
  LabeledDataset out;
  out.features = Tensor::matrix(n, d, std::move(values));
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out.labels.push_back(raw_labels[i]);
    out.ids.push_back(i);
    max_label = std::max<int>(max_label, raw_labels[i]);
  }
  out.num_classes = static_cast<std::size_t>(max_label) + 1;
  for (std::size_t c = 0; c < out.num_classes; ++c) out.class_names.push_back(std::to_string(c));
  return out;
}

}  // namespace protofl::data
