#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <thread>

#include "protofl/errors.hpp"
#include "protofl/mediator/mediator.hpp"
#include "test_util.hpp"

using namespace protofl;
using namespace protofl::mediator;

namespace {

PrototypeRegistry make_registry(std::uint64_t seed = 7, std::size_t pool = 256) {
  TeacherConfig cfg;
  cfg.seed = seed;
  return PrototypeRegistry(Teacher(cfg), make_pool(pool, cfg.input_dim, seed + 100));
}

double brute_force_affinity(const Tensor& a, const Teacher& t, const Tensor& s) {
  const auto ea = t.embed(a), es = t.embed(s);
  double total = 0.0;
  for (std::size_t i = 0; i < ea.rows(); ++i) {
    for (std::size_t j = 0; j < es.rows(); ++j) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t k = 0; k < ea.cols(); ++k) {
        dot += ea.at(i, k) * es.at(j, k);
        na += ea.at(i, k) * ea.at(i, k);
        nb += es.at(j, k) * es.at(j, k);
      }
      total += dot / std::sqrt(na * nb);
    }
  }
  return total / static_cast<double>(ea.rows() * es.rows());
}

}  // namespace

TEST(Registry, ReRegistrationReturnsTheStoredPrototype) {
  auto reg = make_registry();
  const auto a = reg.register_client(3);
  const auto b = reg.register_client(3);
  EXPECT_EQ(a, b);
  EXPECT_EQ(reg.issued(), 1u);
}

TEST(Registry, DistinctClientsGetDistinctPoolSamples) {
  auto reg = make_registry();
  std::set<std::size_t> used;
  for (std::uint64_t k = 0; k < 16; ++k) used.insert(reg.register_client(k).pool_index);
  EXPECT_EQ(used.size(), 16u);
}

TEST(Registry, PrototypesAreReproducible) {
  auto a = make_registry(11);
  auto b = make_registry(11);
  for (std::uint64_t k = 0; k < 8; ++k) EXPECT_EQ(a.register_client(k), b.register_client(k));
}

TEST(Registry, IssuedPrototypesAreWellSeparated) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    auto reg = make_registry(seed, 1024);
    std::vector<Prototype> ps;
    for (std::uint64_t k = 0; k < 64; ++k) ps.push_back(reg.register_client(k));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      EXPECT_EQ(ps[i].vector.size(), 32u);
      for (std::size_t j = i + 1; j < ps.size(); ++j) {
        EXPECT_LT(std::abs(cosine(ps[i].vector.data(), ps[j].vector.data())), 0.5) << "seed " << seed;
      }
    }
  }
}

TEST(Registry, ExhaustedPoolIsACapacityError) {
  auto reg = make_registry(7, 3);
  for (std::uint64_t k = 0; k < 3; ++k) reg.register_client(k);
  EXPECT_THROW(reg.register_client(99), CapacityError);
  EXPECT_FALSE(reg.find(99).has_value());
}

TEST(Registry, ConcurrentRegistrationsStayConsistent) {
  auto reg = make_registry(7, 512);
  std::vector<std::jthread> threads;
  for (std::uint64_t t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (std::uint64_t k = 0; k < 8; ++k) reg.register_client(t * 8 + k);
    });
  }
  threads.clear();
  const auto all = reg.all();
  ASSERT_EQ(all.size(), 32u);
  std::set<std::size_t> used;
  for (const auto& p : all) used.insert(p.pool_index);
  EXPECT_EQ(used.size(), 32u);
}

TEST(Teacher, WeightsAreFrozenAndSeeded) {
  TeacherConfig cfg;
  const Teacher a(cfg), b(cfg);
  EXPECT_EQ(a.weights(), b.weights());
  const auto pool = make_pool(4, cfg.input_dim, 1);
  EXPECT_EQ(a.embed(pool), a.embed(pool));
  cfg.seed = 8;
  EXPECT_NE(Teacher(cfg).weights(), a.weights());
}

TEST(TeacherAffinity, MatchesBruteForceAndSelfDominatesCross) {
  TeacherConfig cfg;
  const Teacher t(cfg);
  const auto pool = make_pool(40, cfg.input_dim, 1);
  std::mt19937_64 rng(2);
  const auto disjoint = testutil::random_tensor({30, cfg.input_dim}, rng, 1.0, 1.5);
  const double self = teacher_affinity(pool, t, pool);
  const double cross = teacher_affinity(disjoint, t, pool);
  EXPECT_NEAR(self, brute_force_affinity(pool, t, pool), 1e-12);
  EXPECT_NEAR(cross, brute_force_affinity(disjoint, t, pool), 1e-12);
  EXPECT_GE(self, cross);
}

TEST(TeacherAffinity, IdenticalEmbeddingsGiveOne) {
  TeacherConfig cfg;
  const Teacher t(cfg);
  const Tensor same(diff::Shape{5, cfg.input_dim}, 0.3);
  EXPECT_NEAR(teacher_affinity(same, t, same), 1.0, 1e-12);
}

TEST(TeacherAffinity, EmptySetIsAContractError) {
  TeacherConfig cfg;
  EXPECT_THROW(teacher_affinity(Tensor(diff::Shape{0}), Teacher(cfg), make_pool(3, cfg.input_dim, 1)),
               Error);
}

TEST(Cosine, OrthogonalParallelAntiparallel) {
  const std::vector<double> a{1, 0, 0}, b{0, 2, 0}, c{-3, 0, 0};
  EXPECT_DOUBLE_EQ(cosine(a, b), 0.0);
  EXPECT_DOUBLE_EQ(cosine(a, a), 1.0);
  EXPECT_DOUBLE_EQ(cosine(a, c), -1.0);
}

TEST(PrototypeFile, RoundTripKeepsEveryField) {
  auto reg = make_registry();
  const auto p = reg.register_client(5);
  const auto path = std::filesystem::temp_directory_path() / "protofl_test_proto.bin";
  save_prototype(path, p, 0x1234);
  std::uint64_t hash = 0;
  const auto back = load_prototype(path, &hash);
  std::filesystem::remove(path);
  EXPECT_EQ(back, p);
  EXPECT_EQ(hash, 0x1234u);
}
