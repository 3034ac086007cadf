#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "protofl/data/datasets.hpp"
#include "protofl/errors.hpp"

using namespace protofl;
using namespace protofl::data;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("protofl-ds-") + info->test_suite_name() + "-" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path file(const std::string& name, const std::string& content) const {
    std::ofstream(path_ / name, std::ios::binary) << content;
    return path_ / name;
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

LabeledDataset from_labels(std::vector<int> labels) {
  LabeledDataset d;
  d.features = Tensor(diff::Shape{labels.size(), 2});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    d.features.at(i, 0) = static_cast<double>(i);
    d.ids.push_back(100 + i);
  }
  d.num_classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  d.labels = std::move(labels);
  return d;
}

std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

}  // namespace

TEST(Partition, OneClientPerClass) {
  const auto shards = partition_extreme(from_labels({0, 0, 1, 2}), 3);
  ASSERT_EQ(shards.size(), 3u);
  EXPECT_EQ(shards[0].cardinality(), 2u);
  EXPECT_EQ(shards[1].cardinality(), 1u);
  EXPECT_EQ(shards[2].cardinality(), 1u);
  EXPECT_EQ(shards[0].sample_ids(), (std::vector<std::uint64_t>{100, 101}));
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(shards[k].client_id(), k);
    EXPECT_EQ(shards[k].label(), static_cast<int>(k));
  }
}

TEST(Partition, DisjointAndCoversTheTrainingSet) {
  const auto ds = gen_synthetic_blobs(5, 17, 6, 4.0, 3);
  const auto shards = partition_extreme(ds, 5);
  std::set<std::uint64_t> seen;
  std::size_t total = 0;
  for (const auto& s : shards) {
    total += s.cardinality();
    for (auto id : s.sample_ids()) EXPECT_TRUE(seen.insert(id).second);
    EXPECT_EQ(s.samples().rows(), s.cardinality());
  }
  EXPECT_EQ(total, ds.size());
  EXPECT_EQ(seen, std::set<std::uint64_t>(ds.ids.begin(), ds.ids.end()));
}

TEST(Partition, WrongClientCountOrEmptyClassIsRejected) {
  EXPECT_THROW(partition_extreme(from_labels({0, 1, 2}), 2), ConfigError);
  auto d = from_labels({0, 0, 2});
  EXPECT_THROW(partition_extreme(d, 3), ContractError);
}

TEST(Partition, ReadsAreCounted) {
  const auto shards = partition_extreme(from_labels({0, 1}), 2);
  EXPECT_EQ(shards[0].read_count(), 0u);
  (void)shards[0].samples();
  (void)shards[0].samples();
  EXPECT_EQ(shards[0].read_count(), 2u);
  EXPECT_EQ(shards[1].read_count(), 0u);
  // Copies share the counter.
  const auto copy = shards[1];
  (void)copy.samples();
  EXPECT_EQ(shards[1].read_count(), 1u);
}

TEST(Blobs, DeterministicWithRequestedCounts) {
  const auto a = gen_synthetic_blobs(4, 25, 5, 3.0, 9);
  const auto b = gen_synthetic_blobs(4, 25, 5, 3.0, 9);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.size(), 100u);
  EXPECT_EQ(a.dim(), 5u);
  EXPECT_EQ(a.num_classes, 4u);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(std::count(a.labels.begin(), a.labels.end(), c), 25);
  EXPECT_NE(a.features, gen_synthetic_blobs(4, 25, 5, 3.0, 10).features);
}

TEST(Blobs, MeansArePairwiseSeparated) {
  const std::size_t n = 4000;
  const auto d = gen_synthetic_blobs(3, n, 4, 6.0, 2);
  std::vector<std::vector<double>> means(3, std::vector<double>(4, 0.0));
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < 4; ++j) means[d.labels[i]][j] += d.features.at(i, j) / n;
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < 4; ++j) sq += (means[a][j] - means[b][j]) * (means[a][j] - means[b][j]);
      EXPECT_NEAR(std::sqrt(sq), 6.0, 0.15);
    }
}

TEST(Blobs, WellSeparatedClustersAreLinearlySeparable) {
  // Nearest-class-mean classifier with the empirical means.
  const auto d = gen_synthetic_blobs(2, 500, 2, 10.0, 4);
  std::vector<std::vector<double>> means(2, std::vector<double>(2, 0.0));
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < 2; ++j) means[d.labels[i]][j] += d.features.at(i, j) / 500.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      d0 += std::pow(d.features.at(i, j) - means[0][j], 2);
      d1 += std::pow(d.features.at(i, j) - means[1][j], 2);
    }
    correct += (d0 < d1 ? 0 : 1) == d.labels[i];
  }
  EXPECT_GT(static_cast<double>(correct) / d.size(), 0.999);
}

TEST(Blobs, InvalidArguments) {
  EXPECT_THROW(gen_synthetic_blobs(3, 10, 2, 1.0, 0), ConfigError);
  EXPECT_THROW(gen_synthetic_blobs(2, 10, 2, 0.0, 0), ConfigError);
  EXPECT_THROW(gen_synthetic_blobs(2, 0, 2, 1.0, 0), ConfigError);
}

TEST(Split, PerClassFractionsAndDisjointIds) {
  const auto d = gen_synthetic_blobs(3, 10, 3, 2.0, 1);
  const auto s = split_per_class(d, 0.8, 5);
  EXPECT_EQ(s.train.size(), 24u);
  EXPECT_EQ(s.test.size(), 6u);
  std::set<std::uint64_t> ids(s.train.ids.begin(), s.train.ids.end());
  for (auto id : s.test.ids) EXPECT_FALSE(ids.contains(id));
  EXPECT_EQ(s.train.ids, split_per_class(d, 0.8, 5).train.ids);
  EXPECT_THROW(split_per_class(d, 1.0, 5), ConfigError);
}

TEST(Tabular, LoadsMapsLabelsAndDropsColumns) {
  TempDir dir;
  const auto p = dir.file("t.csv", "id,a,b,kind\n1,0,5,cat\n2,10,5,dog\n3,5,5,cat\n");
  const auto d = load_tabular(p, {"kind", {"id"}, ','});
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.dim(), 2u);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"cat", "dog"}));
  const auto scaled = MinMaxScaler::fit(d.features).transform(d.features);
  EXPECT_EQ(scaled.at(0, 0), 0.0);
  EXPECT_EQ(scaled.at(1, 0), 1.0);
  EXPECT_EQ(scaled.at(2, 0), 0.5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(scaled.at(i, 1), 0.0);
}

TEST(Tabular, ErrorsNameTheLine) {
  TempDir dir;
  const auto bad_number = dir.file("n.csv", "a,label\n1,x\nfoo,y\n");
  try {
    load_tabular(bad_number, {"label", {}, ','});
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  const auto ragged = dir.file("r.csv", "a,b,label\n1,2,x\n1,y\n");
  EXPECT_THROW(load_tabular(ragged, {"label", {}, ','}), FormatError);
  EXPECT_THROW(load_tabular(dir.path() / "missing.csv", {"label", {}, ','}), FormatError);
  const auto no_label = dir.file("l.csv", "a,b\n1,2\n");
  EXPECT_THROW(load_tabular(no_label, {"label", {}, ','}), FormatError);
}

TEST(Tabular, SemicolonDelimiter) {
  TempDir dir;
  const auto p = dir.file("s.csv", "x;y;c\n1.5;2;a\n-3;4e1;b\n");
  const auto d = load_tabular(p, {"c", {}, ';'});
  EXPECT_EQ(d.features.at(1, 1), 40.0);
  EXPECT_EQ(d.features.at(1, 0), -3.0);
}

TEST(Scaler, RoundTripsThroughJsonAndFile) {
  const MinMaxScaler s({0.0, -1.5}, {2.0, 3.25});
  const auto back = MinMaxScaler::from_json(s.to_json());
  EXPECT_EQ(back.mins(), s.mins());
  EXPECT_EQ(back.maxs(), s.maxs());
  TempDir dir;
  s.save(dir.path() / "scaler.json");
  EXPECT_EQ(MinMaxScaler::load(dir.path() / "scaler.json").maxs(), s.maxs());
  EXPECT_THROW(MinMaxScaler::from_json("{\"kind\":\"z\"}"), FormatError);
  EXPECT_THROW(s.transform(Tensor(diff::Shape{1, 3})), DimensionError);
}

TEST(Idx, LoadsImagesAndLabels) {
  TempDir dir;
  const auto images = dir.file("img", be32(0x803) + be32(2) + be32(2) + be32(2) + std::string("\x00\xff\x10\x20\x30\x40\x50\x60", 8));
  const auto labels = dir.file("lab", be32(0x801) + be32(2) + std::string("\x03\x01", 2));
  const auto d = load_idx_images(images, labels);
  EXPECT_EQ(d.size(), 2u);
  EXPECT_EQ(d.dim(), 4u);
  EXPECT_EQ(d.features.at(0, 1), 1.0);
  EXPECT_EQ(d.features.at(0, 0), 0.0);
  EXPECT_EQ(d.labels, (std::vector<int>{3, 1}));
}

TEST(Idx, PayloadLengthIsChecked) {
  TempDir dir;
  const auto images = dir.file("img", be32(0x803) + be32(2) + be32(2) + be32(2) + std::string(7, '\x01'));
  const auto labels = dir.file("lab", be32(0x801) + be32(2) + std::string("\x00\x01", 2));
  EXPECT_THROW(load_idx_images(images, labels), FormatError);
  const auto short_hdr = dir.file("h", be32(0x803) + be32(2));
  EXPECT_THROW(load_idx_images(short_hdr, labels), FormatError);
  const auto images_ok = dir.file("ok", be32(0x803) + be32(1) + be32(1) + be32(1) + std::string(1, '\x01'));
  EXPECT_THROW(load_idx_images(images_ok, labels), FormatError);
}
