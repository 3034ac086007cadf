#include "protofl/diff/ops.hpp"

#include <algorithm>
#include <cmath>

#include "protofl/errors.hpp"

namespace protofl::diff {
namespace {

void require_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) throw ContractError("operands live on different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " + shape_string(a.shape()));
}

void require_row_broadcast(const Tensor& a, const Tensor& row, const char* op) {
  require_rank2(a, op);
  if (row.rank() != 1 || row.size() != a.cols()) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(row.shape()) + " over " +
                         shape_string(a.shape()));
  }
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
  Tape& tape = *a.tape();
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const auto ia = a.id();
  return tape.record(std::move(y), {ia}, [ia, deriv](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.adjoint(self);
    const Tensor& x = t.value(ia);
    const Tensor& y = t.value(self);
    Tensor& gx = t.accumulate_into(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor c(Shape{n, m}, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  auto C = c.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B[p * m];
      double* crow = &C[i * m];
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  Tensor c = matmul(a.value(), b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(c), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    if (t.needs_grad(ia)) {
      Tensor& gA = t.accumulate_into(ia);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * B[p * m + j];
          gA[i * k + p] += acc;
        }
      }
    }
    if (t.needs_grad(ib)) {
      Tensor& gB = t.accumulate_into(ib);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gB[p * m + j] += aip * g[i * m + j];
        }
      }
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor c = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(c), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    for (auto id : {ia, ib}) {
      if (!t.needs_grad(id)) continue;
      Tensor& gx = t.accumulate_into(id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor c = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(c), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.accumulate_into(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.accumulate_into(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor c = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(c), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (t.needs_grad(ia)) {
      Tensor& ga = t.accumulate_into(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.accumulate_into(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  return unary(a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  require_row_broadcast(a.value(), row.value(), "add_row");
  Tensor c = a.value();
  const std::size_t n = c.rows(), m = c.cols();
  const auto r = row.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) c[i * m + j] += r[j];
  const auto ia = a.id(), ir = row.id();
  return a.tape()->record(std::move(c), {ia, ir}, [ia, ir](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const std::size_t n = g.rows(), m = g.cols();
    if (t.needs_grad(ia)) {
      Tensor& ga = t.accumulate_into(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(ir)) {
      Tensor& gr = t.accumulate_into(ir);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
    }
  });
}

Var mul_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  require_row_broadcast(a.value(), row.value(), "mul_row");
  Tensor c = a.value();
  const std::size_t n = c.rows(), m = c.cols();
  const auto r = row.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) c[i * m + j] *= r[j];
  const auto ia = a.id(), ir = row.id();
  return a.tape()->record(std::move(c), {ia, ir}, [ia, ir](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const Tensor& A = t.value(ia);
    const Tensor& R = t.value(ir);
    const std::size_t n = g.rows(), m = g.cols();
    if (t.needs_grad(ia)) {
      Tensor& ga = t.accumulate_into(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i * m + j] * R[j];
    }
    if (t.needs_grad(ir)) {
      Tensor& gr = t.accumulate_into(ir);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j] * A[i * m + j];
    }
  });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const auto ia = a.id();
  return a.tape()->record(Tensor::scalar(s), {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const double g = t.adjoint(self)[0];
    Tensor& ga = t.accumulate_into(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sum(const Var& a) {
  const Tensor& x = a.value();
  require_rank2(x, "row_sum");
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y(Shape{n}, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[i] += x[i * m + j];
  const auto ia = a.id();
  return a.tape()->record(std::move(y), {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& g = t.adjoint(self);
    Tensor& ga = t.accumulate_into(ia);
    const std::size_t n = ga.rows(), m = ga.cols();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i];
  });
}

Var group_norm(const Var& a, std::size_t groups, double eps) {
  const Tensor& x = a.value();
  require_rank2(x, "group_norm");
  const std::size_t n = x.rows(), h = x.cols();
  if (groups == 0 || h % groups != 0) {
    throw DimensionError("group_norm: " + std::to_string(groups) + " groups do not divide " + std::to_string(h) +
                         " channels");
  }
  const std::size_t width = h / groups;
  Tensor y(x.shape());
  // One inverse std per (row, group), needed by the backward pass.
  std::vector<double> inv_std(n * groups);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t off = i * h + g * width;
      double mu = 0.0;
      for (std::size_t j = 0; j < width; ++j) mu += x[off + j];
      mu /= static_cast<double>(width);
      double var = 0.0;
      for (std::size_t j = 0; j < width; ++j) var += (x[off + j] - mu) * (x[off + j] - mu);
      var /= static_cast<double>(width);
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[i * groups + g] = inv;
      for (std::size_t j = 0; j < width; ++j) y[off + j] = (x[off + j] - mu) * inv;
    }
  }
  const auto ia = a.id();
  return a.tape()->record(std::move(y), {ia},
                          [ia, groups, width, inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& dy = t.adjoint(self);
    const Tensor& y = t.value(self);
    Tensor& dx = t.accumulate_into(ia);
    const std::size_t n = y.rows(), h = y.cols();
    const double m = static_cast<double>(width);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t off = i * h + g * width;
        double sum_dy = 0.0, sum_dy_y = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
          sum_dy += dy[off + j];
          sum_dy_y += dy[off + j] * y[off + j];
        }
        const double inv = inv_std[i * groups + g];
        for (std::size_t j = 0; j < width; ++j) {
          dx[off + j] += inv / m * (m * dy[off + j] - sum_dy - y[off + j] * sum_dy_y);
        }
      }
    }
  });
}

Var log_softmax_rows(const Var& a) {
  const Tensor& x = a.value();
  require_rank2(x, "log_softmax_rows");
  const std::size_t n = x.rows(), m = x.cols();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = x.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (double v : row) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < m; ++j) y[i * m + j] = row[j] - lse;
  }
  const auto ia = a.id();
  return a.tape()->record(std::move(y), {ia}, [ia](Tape& t, std::size_t self) {
    if (!t.needs_grad(ia)) return;
    const Tensor& dy = t.adjoint(self);
    const Tensor& y = t.value(self);
    Tensor& dx = t.accumulate_into(ia);
    const std::size_t n = y.rows(), m = y.cols();
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += dy[i * m + j];
      for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += dy[i * m + j] - std::exp(y[i * m + j]) * s;
    }
  });
}

Var cosine_rows(const Var& a, const Var& b, double eps) {
  require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "cosine_rows");
  require_same_shape(A, B, "cosine_rows");
  const std::size_t n = A.rows(), m = A.cols();
  Tensor c(Shape{n});
  // Per row: clamped norms and whether the clamp was active.
  struct RowNorms {
    double na, nb;
    bool clamped_a, clamped_b;
  };
  std::vector<RowNorms> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      dot += A[i * m + j] * B[i * m + j];
      aa += A[i * m + j] * A[i * m + j];
      bb += B[i * m + j] * B[i * m + j];
    }
    RowNorms r{std::sqrt(aa), std::sqrt(bb), false, false};
    if (r.na < eps) r = {eps, r.nb, true, r.clamped_b};
    if (r.nb < eps) r = {r.na, eps, r.clamped_a, true};
    norms[i] = r;
    c[i] = dot / (r.na * r.nb);
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(c), {ia, ib}, [ia, ib, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Tensor& g = t.adjoint(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    const Tensor& C = t.value(self);
    const std::size_t n = A.rows(), m = A.cols();
    const bool need_a = t.needs_grad(ia), need_b = t.needs_grad(ib);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = norms[i];
      const double denom = r.na * r.nb;
      if (need_a) {
        Tensor& ga = t.accumulate_into(ia);
        const double self_term = r.clamped_a ? 0.0 : C[i] / (r.na * r.na);
        for (std::size_t j = 0; j < m; ++j) {
          ga[i * m + j] += g[i] * (B[i * m + j] / denom - self_term * A[i * m + j]);
        }
      }
      if (need_b) {
        Tensor& gb = t.accumulate_into(ib);
        const double self_term = r.clamped_b ? 0.0 : C[i] / (r.nb * r.nb);
        for (std::size_t j = 0; j < m; ++j) {
          gb[i * m + j] += g[i] * (A[i * m + j] / denom - self_term * B[i * m + j]);
        }
      }
    }
  });
}

}  // namespace protofl::diff
