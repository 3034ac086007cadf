#include <gtest/gtest.h>

#include <cmath>

#include "protofl/diff/ops.hpp"
#include "protofl/diff/optim.hpp"
#include "protofl/diff/tape.hpp"
#include "protofl/errors.hpp"
#include "test_util.hpp"

using namespace protofl;
using namespace protofl::diff;
using testutil::random_tensor;

namespace {

// f(x) = sum(op(x) * w) for a fixed random w, so every output element
// contributes to the gradient with a distinct weight.
using UnaryOp = std::function<Var(const Var&)>;

void expect_op_gradient(const UnaryOp& op, const Tensor& x0, double tol = 1e-4) {
  std::mt19937_64 rng(99);
  Tensor w;
  {
    Tape probe;
    w = random_tensor(op(probe.constant(x0)).shape(), rng);
  }
  auto value = [&](const Tensor& x) {
    Tape tape;
    return sum(mul(op(tape.constant(x)), tape.constant(w))).value().item();
  };
  Tape tape;
  const Var x = tape.leaf(x0);
  const auto grads = tape.backward(sum(mul(op(x), tape.constant(w))));
  const auto& g = grads[x];
  const auto numeric = testutil::numeric_gradient(value, x0);
  EXPECT_LT(testutil::max_rel_error({g.data().begin(), g.data().end()}, numeric), tol);
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{0, 3}), DimensionError);
  const auto m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.at(1, 2), 6.0);
  EXPECT_THROW(Tensor::vector({1, 2}).rows(), DimensionError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const auto b = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Tensor::matrix({{1, 0}, {0, 1}}), b), b);
}

TEST(Matmul, ProjectorKeepsFirstRow) {
  EXPECT_EQ(matmul(Tensor::matrix({{1, 0}, {0, 0}}), Tensor::matrix({{5, 6}, {7, 8}})),
            Tensor::matrix({{5, 6}, {0, 0}}));
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(1);
  const auto a = random_tensor({3, 4}, rng);
  const auto b = random_tensor({4, 2}, rng);
  const auto c = matmul(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-12);
    }
  }
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(matmul(random_tensor({3, 4}, rng), random_tensor({3, 2}, rng)), DimensionError);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  const Var x = tape.leaf(Tensor::vector({1, 2, 3}));
  const auto g = tape.backward(sum(square(x)));
  EXPECT_EQ(g[x], Tensor::vector({2, 4, 6}));
}

TEST(Backward, ConstantOutputGivesZeroGradient) {
  Tape tape;
  const Var x = tape.leaf(Tensor::vector({1, 2, 3}));
  const Var c = tape.constant(Tensor::vector({4, 5}));
  const auto g = tape.backward(sum(c));
  EXPECT_EQ(g[x], Tensor::vector({0, 0, 0}));
}

TEST(Backward, LeafOffThePathGetsZeros) {
  Tape tape;
  const Var x = tape.leaf(Tensor::vector({1, 2}));
  const Var y = tape.leaf(Tensor::vector({3, 4}));
  const auto g = tape.backward(sum(square(x)));
  EXPECT_EQ(g[y], Tensor::vector({0, 0}));
}

TEST(Backward, NonScalarOutputIsAContractError) {
  Tape tape;
  const Var x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(square(x)), ContractError);
}

TEST(Backward, OutputFromAnotherTapeIsRejected) {
  Tape a, b;
  const Var x = a.leaf(Tensor::vector({1, 2}));
  const Var out = sum(x);
  b.leaf(Tensor::scalar(0));
  EXPECT_THROW(b.backward(out), ContractError);
}

TEST(Tape, NonFiniteValuesAreRejected) {
  Tape tape;
  const Var x = tape.leaf(Tensor::vector({1000.0}));
  EXPECT_THROW(exp(x), NumericError);
}

TEST(OpGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor({3, 4}, rng);
  const auto other = random_tensor({3, 4}, rng);
  const auto right = random_tensor({4, 2}, rng);
  const auto row = random_tensor({4}, rng);
  const auto left = random_tensor({2, 3}, rng);
  const std::vector<std::pair<const char*, UnaryOp>> ops = {
      {"matmul", [&](const Var& v) { return matmul(v, v.tape()->constant(right)); }},
      {"matmul-right", [&](const Var& v) { return matmul(v.tape()->constant(left), v); }},
      {"add", [&](const Var& v) { return add(v, v.tape()->constant(other)); }},
      {"sub", [&](const Var& v) { return sub(v.tape()->constant(other), v); }},
      {"mul-self", [&](const Var& v) { return mul(v, v); }},
      {"scale", [&](const Var& v) { return scale(v, -1.7); }},
      {"add_scalar", [&](const Var& v) { return add_scalar(v, 0.3); }},
      {"add_row", [&](const Var& v) { return add_row(v, v.tape()->constant(row)); }},
      {"mul_row", [&](const Var& v) { return mul_row(v, v.tape()->constant(row)); }},
      {"tanh", [&](const Var& v) { return tanh(v); }},
      {"exp", [&](const Var& v) { return exp(v); }},
      {"square", [&](const Var& v) { return square(v); }},
      {"mean", [&](const Var& v) { return mean(v); }},
      {"row_sum", [&](const Var& v) { return row_sum(v); }},
      {"group_norm", [&](const Var& v) { return group_norm(v, 2); }},
      {"log_softmax_rows", [&](const Var& v) { return log_softmax_rows(v); }},
      {"cosine_rows", [&](const Var& v) { return cosine_rows(v, v.tape()->constant(other)); }},
  };
  for (const auto& [name, op] : ops) {
    SCOPED_TRACE(name);
    expect_op_gradient(op, x);
  }
}

TEST(OpGradients, RowOperandsReceiveGradients) {
  std::mt19937_64 rng(6);
  const auto a = random_tensor({3, 4}, rng);
  const auto r0 = random_tensor({4}, rng);
  expect_op_gradient([&](const Var& r) { return mul_row(r.tape()->constant(a), r); }, r0);
  expect_op_gradient([&](const Var& r) { return add_row(r.tape()->constant(a), r); }, r0);
  expect_op_gradient([&](const Var& b) { return cosine_rows(b.tape()->constant(a), b); }, a);
}

TEST(OpGradients, ReluAwayFromTheKink) {
  Tensor x = Tensor::matrix({{-1.5, 0.7, 2.0}, {0.4, -0.2, -3.0}});
  expect_op_gradient([](const Var& v) { return relu(v); }, x);
}

TEST(ChainRule, MatchesHandComposedGradient) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    const auto x0 = random_tensor({5}, rng);
    Tape tape;
    const Var x = tape.leaf(x0);
    const auto g = tape.backward(sum(square(tanh(x))));
    for (std::size_t i = 0; i < 5; ++i) {
      const double t = std::tanh(x0[i]);
      EXPECT_NEAR(g[x][i], 2.0 * t * (1.0 - t * t), 1e-14);
    }
  }
}

TEST(GroupNorm, NormalizesEachGroup) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({4, 8}, rng, 3.0, 5.0);
  Tape tape;
  const auto y = group_norm(tape.constant(x), 4).value();
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t g = 0; g < 4; ++g) {
      const double a = y.at(r, 2 * g), b = y.at(r, 2 * g + 1);
      const double m = (a + b) / 2.0;
      const double v = ((a - m) * (a - m) + (b - m) * (b - m)) / 2.0;
      const double xa = x.at(r, 2 * g), xb = x.at(r, 2 * g + 1);
      const double xv = (xa - xb) * (xa - xb) / 4.0;
      EXPECT_LT(std::abs(m), 1e-9);
      EXPECT_NEAR(v, xv / (xv + 1e-5), 1e-12);
    }
  }
  EXPECT_THROW(group_norm(tape.constant(x), 3), DimensionError);
}

TEST(Determinism, SameInputsGiveBitIdenticalOutputs) {
  auto run = [] {
    std::mt19937_64 rng(11);
    const auto a = random_tensor({6, 5}, rng);
    Tape tape;
    const Var x = tape.leaf(a);
    const auto g = tape.backward(sum(log_softmax_rows(group_norm(x, 5))));
    return g[x];
  };
  EXPECT_EQ(run(), run());
}

TEST(Sgd, OneStep) {
  Optimizer opt(OptimizerConfig::sgd(0.1));
  std::vector<double> p{1.0};
  opt.step(p, std::vector<double>{2.0});
  EXPECT_DOUBLE_EQ(p[0], 0.8);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(Sgd, ZeroGradientIsAFixedPoint) {
  Optimizer opt(OptimizerConfig::sgd(0.1, 0.9));
  std::vector<double> p{1.5, -2.0};
  for (int i = 0; i < 5; ++i) opt.step(p, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(p, (std::vector<double>{1.5, -2.0}));
}

TEST(Sgd, WeightDecayAddsToGradient) {
  Optimizer opt(OptimizerConfig::sgd(0.1, 0.0, 0.5));
  std::vector<double> p{2.0};
  opt.step(p, std::vector<double>{1.0});
  EXPECT_DOUBLE_EQ(p[0], 2.0 - 0.1 * (1.0 + 0.5 * 2.0));
}

TEST(Sgd, ConvergesOnQuadratic) {
  Optimizer opt(OptimizerConfig::sgd(0.1));
  std::vector<double> p{0.0};
  for (int i = 0; i < 50; ++i) opt.step(p, std::vector<double>{2.0 * (p[0] - 3.0)});
  EXPECT_LT(std::abs(p[0] - 3.0), 1e-3);
}

TEST(Sgd, ShapeMismatchThrows) {
  Optimizer opt(OptimizerConfig::sgd(0.1));
  std::vector<double> p{1.0, 2.0};
  EXPECT_THROW(opt.step(p, std::vector<double>{1.0}), DimensionError);
}

TEST(RAdam, ZeroGradientIsAFixedPoint) {
  Optimizer opt(OptimizerConfig::radam(0.01, 0.94, 0.98, 0.0));
  std::vector<double> p{1.0, -1.0};
  for (int i = 0; i < 20; ++i) opt.step(p, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(p, (std::vector<double>{1.0, -1.0}));
  EXPECT_EQ(opt.step_count(), 20u);
}

TEST(RAdam, ConvergesOnQuadratic) {
  Optimizer opt(OptimizerConfig::radam(0.05, 0.94, 0.98, 0.0));
  std::vector<double> p{0.0};
  for (int i = 0; i < 1000; ++i) opt.step(p, std::vector<double>{2.0 * (p[0] - 3.0)});
  EXPECT_LT(std::abs(p[0] - 3.0), 1e-2);
}

TEST(RAdam, MatchesReferenceRecurrence) {
  const double lr = 0.05, b1 = 0.94, b2 = 0.98, wd = 1e-3, eps = 1e-8;
  Optimizer opt(OptimizerConfig::radam(lr, b1, b2, wd));
  std::vector<double> p{0.5};
  double q = 0.5, m = 0.0, v = 0.0;
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  for (int t = 1; t <= 30; ++t) {
    const double grad = std::sin(q) + 2.0 * q;
    opt.step(p, std::vector<double>{std::sin(p[0]) + 2.0 * p[0]});
    const double g = grad + wd * q;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double m_hat = m / (1.0 - std::pow(b1, t));
    const double rho = rho_inf - 2.0 * t * std::pow(b2, t) / (1.0 - std::pow(b2, t));
    if (rho > 5.0) {
      const double r = std::sqrt((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho));
      q -= lr * r * m_hat * std::sqrt(1.0 - std::pow(b2, t)) / (std::sqrt(v) + eps);
    } else {
      q -= lr * m_hat;
    }
    EXPECT_NEAR(p[0], q, 1e-12) << "step " << t;
  }
}

TEST(OptimizerConfig, RejectsOutOfRangeValues) {
  auto c = OptimizerConfig::radam(0.01);
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(optimizer_kind_from_string("adam"), ConfigError);
  EXPECT_THROW(OptimizerConfig::sgd(-1.0).validate(), ConfigError);
}
