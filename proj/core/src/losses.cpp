#include "protofl/losses/losses.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "protofl/errors.hpp"

namespace protofl::losses {
namespace {

constexpr double kNormFloor = 1e-12;

void warn_zero_norms(const Tensor& a, const char* what) {
  const std::size_t n = a.rows(), m = a.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += a[i * m + j] * a[i * m + j];
    if (std::sqrt(s) < kNormFloor) {
      spdlog::warn("{}: row {} has near-zero norm; cosine norm clamped at {}", what, i, kNormFloor);
    }
  }
}

void require_batch(const Var& v, const char* what) {
  const auto& s = v.shape();
  if (s.size() != 2 || s[0] == 0) throw ContractError(std::string(what) + ": expected a non-empty [rows, D] batch");
}

Tensor softmax(const Tensor& v, double temperature) {
  Tensor p(v.shape());
  double mx = v[0] / temperature;
  for (double x : v.data()) mx = std::max(mx, x / temperature);
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += (p[i] = std::exp(v[i] / temperature - mx));
  for (auto& x : p.data()) x /= s;
  return p;
}

}  // namespace

void Phase1Weights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1], got " + std::to_string(alpha));
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
}

void Phase2Weights::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("lambda must be >= 0, got " + std::to_string(lambda));
  }
}

double cosine_loss(const Tensor& a, const Tensor& b) {
  diff::Tape tape;
  const auto av = tape.constant(a.reshaped({1, a.size()}));
  const auto bv = tape.constant(b.reshaped({1, b.size()}));
  return cosine_loss_rows(av, bv).value()[0];
}

Var cosine_loss_rows(const Var& a, const Var& b) {
  warn_zero_norms(a.value(), "cosine loss");
  warn_zero_norms(b.value(), "cosine loss");
  // 1 - cos == (-1) * cos + 1
  return diff::add_scalar(diff::scale(diff::cosine_rows(a, b, kNormFloor), -1.0), 1.0);
}

Var prototype_kl_rows(const Var& logits, const Tensor& prototype, double temperature) {
  require_batch(logits, "prototype KL");
  if (prototype.rank() != 1 || prototype.size() != logits.shape()[1]) {
    throw DimensionError("prototype of shape " + diff::shape_string(prototype.shape()) +
                         " does not match latent width " + std::to_string(logits.shape()[1]));
  }
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  diff::Tape& tape = *logits.tape();
  const Tensor p = softmax(prototype, temperature);
  // sum_j p_j log p_j, a constant per row.
  double neg_entropy = 0.0;
  for (double pj : p.data()) {
    if (pj > 0.0) neg_entropy += pj * std::log(pj);
  }
  const auto log_q = diff::log_softmax_rows(diff::scale(logits, 1.0 / temperature));
  const auto cross = diff::row_sum(diff::mul_row(log_q, tape.constant(p)));
  return diff::add_scalar(diff::scale(cross, -1.0), neg_entropy);
}

double prototype_kl(const Tensor& logits, const Tensor& prototype, double temperature) {
  diff::Tape tape;
  const auto l = tape.constant(logits.reshaped({1, logits.size()}));
  return prototype_kl_rows(l, prototype, temperature).value()[0];
}

Var loss_p(const Var& r, const Var& r_hat) {
  require_batch(r, "loss_p");
  return diff::mean(cosine_loss_rows(r, r_hat));
}

Var loss_pd(const Var& r, const Var& r_hat, const Tensor& prototype, double temperature) {
  require_batch(r, "loss_pd");
  require_batch(r_hat, "loss_pd");
  if (r.shape() != r_hat.shape()) throw DimensionError("loss_pd: view batches differ in shape");
  const auto kl = diff::add(prototype_kl_rows(r, prototype, temperature),
                            prototype_kl_rows(r_hat, prototype, temperature));
  return diff::mean(kl);
}

Var phase1_loss(const Var& r, const Var& r_hat, const Tensor& prototype, const Phase1Weights& weights) {
  weights.validate();
  const double a = weights.alpha;
  if (a == 1.0) return loss_p(r, r_hat);
  if (a == 0.0) return loss_pd(r, r_hat, prototype, weights.temperature);
  return diff::add(diff::scale(loss_pd(r, r_hat, prototype, weights.temperature), 1.0 - a),
                   diff::scale(loss_p(r, r_hat), a));
}

Var loss_mle(const Var& z, const Var& logdet) {
  require_batch(z, "loss_mle");
  const auto& ld = logdet.value();
  if (ld.rank() != 1 || ld.size() != z.shape()[0]) {
    throw DimensionError("loss_mle: logdet must hold one value per sample");
  }
  for (std::size_t i = 0; i < ld.size(); ++i) {
    if (!std::isfinite(ld[i])) throw NumericError("loss_mle: non-finite logdet at sample " + std::to_string(i));
  }
  const auto half_sq = diff::scale(diff::row_sum(diff::square(z)), 0.5);
  return diff::mean(diff::sub(half_sq, logdet));
}

Var loss_reg(const Var& z, const Var& z_hat) {
  require_batch(z, "loss_reg");
  require_batch(z_hat, "loss_reg");
  if (z.shape()[0] != z_hat.shape()[0]) {
    throw DimensionError("loss_reg: batch sizes differ (" + std::to_string(z.shape()[0]) + " vs " +
                         std::to_string(z_hat.shape()[0]) + ")");
  }
  return diff::mean(cosine_loss_rows(z, z_hat));
}

Var phase2_loss(const Var& z, const Var& z_hat, const Var& logdet, const Phase2Weights& weights) {
  weights.validate();
  const auto mle = loss_mle(z, logdet);
  if (weights.lambda == 0.0) return mle;
  return diff::add(mle, diff::scale(loss_reg(z, z_hat), weights.lambda));
}

double combine_phase1(double l_pd, double l_p, const Phase1Weights& weights) {
  weights.validate();
  return (1.0 - weights.alpha) * l_pd + weights.alpha * l_p;
}

double combine_phase2(double l_mle, double l_reg, const Phase2Weights& weights) {
  weights.validate();
  return l_mle + weights.lambda * l_reg;
}

}  // namespace protofl::losses
