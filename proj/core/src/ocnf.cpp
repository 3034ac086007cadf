#include "protofl/ocnf/ocnf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "protofl/errors.hpp"
#include "protofl/rng.hpp"

namespace protofl::ocnf {
namespace {

constexpr double kDiagonalRidge = 1e-6;

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows) {
  const std::size_t d = src.cols();
  Tensor out(diff::Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = src.row(rows[i]);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

double phase2_value(const FlowModel& model, const Tensor& r, const Tensor& r_hat, const losses::Phase2Weights& w) {
  diff::Tape tape;
  const auto bound = repr::bind(tape, model.params(), false);
  const auto a = model.inverse(bound, tape.constant(r));
  const auto b = model.inverse(bound, tape.constant(r_hat));
  return losses::phase2_loss(a.z, b.z, a.logdet, w).value().item();
}

}  // namespace

void OcnfConfig::validate() const {
  std::ostringstream errs;
  if (epochs == 0) errs << " epochs must be positive;";
  if (batch_size == 0) errs << " batch_size must be positive;";
  if (const auto s = errs.str(); !s.empty()) throw ConfigError("ocnf:" + s);
  flow.validate();
  optimizer.validate();
  weights.validate();
  augment.validate();
}

TrainedFlow train_ocnf(std::uint64_t client_id, const repr::Encoder& frozen_encoder, const Tensor& samples,
                       const OcnfConfig& config) {
  auto init_rng = make_stream(config.seed, "flow-init", {client_id});
  return train_ocnf(client_id, frozen_encoder, samples, config, FlowModel::initialize(config.flow, init_rng));
}

TrainedFlow train_ocnf(std::uint64_t client_id, const repr::Encoder& frozen_encoder, const Tensor& samples,
                       const OcnfConfig& config, FlowModel initial) {
  config.validate();
  if (samples.rank() != 2 || samples.rows() == 0) {
    throw ContractError("train_ocnf: client " + std::to_string(client_id) + " has an empty shard");
  }
  if (frozen_encoder.config().output_dim != config.flow.dim) {
    throw DimensionError("flow dim " + std::to_string(config.flow.dim) + " differs from encoder latent dim " +
                         std::to_string(frozen_encoder.config().output_dim));
  }
  FlowModel model = std::move(initial);
  if (!(model.config() == config.flow)) throw ConfigError("initial flow does not match the flow config");
  diff::Optimizer optimizer(config.optimizer);
  auto rng = make_stream(config.seed, "flow-train", {client_id});
  const std::size_t n = samples.rows();

  TrainedFlow out{std::move(model), {}};
  {
    auto views = repr::augment_pair(samples, config.augment, rng);
    out.log.epoch_losses.push_back(phase2_value(out.model, frozen_encoder.encode(views.x),
                                                frozen_encoder.encode(views.x_hat), config.weights));
  }

  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    // The encoder only ever runs gradient-free here.
    auto views = repr::augment_pair(samples, config.augment, rng);
    const Tensor r_all = frozen_encoder.encode(views.x);
    const Tensor r_hat_all = frozen_encoder.encode(views.x_hat);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const auto rows = std::span<const std::size_t>(order).subspan(start, std::min(config.batch_size, n - start));
      diff::Tape tape;
      const auto bound = repr::bind(tape, out.model.params(), true);
      try {
        const auto a = out.model.inverse(bound, tape.constant(gather_rows(r_all, rows)));
        const auto b = out.model.inverse(bound, tape.constant(gather_rows(r_hat_all, rows)));
        const auto loss = losses::phase2_loss(a.z, b.z, a.logdet, config.weights);
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw NumericError("non-finite loss");
        loss_sum += value;
        ++batches;
        const auto grads = repr::gather_gradients(tape.backward(loss), bound, out.model.params().layout());
        optimizer.step(out.model.mutable_params().values(), grads);
      } catch (const NumericError& e) {
        throw NumericError("train_ocnf: client " + std::to_string(client_id) + ", epoch " + std::to_string(epoch) +
                           ": " + e.what());
      }
    }
    out.log.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
  }
  return out;
}

std::vector<double> nll_scores(const FlowModel& model, const Tensor& latents) {
  const auto inv = model.flow_inverse(latents);
  const std::size_t n = inv.z.rows(), d = inv.z.cols();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += inv.z[i * d + j] * inv.z[i * d + j];
    scores[i] = 0.5 * sq - inv.logdet[i];
    if (!std::isfinite(scores[i])) throw NumericError("anomaly score overflow for sample " + std::to_string(i));
  }
  return scores;
}

double nll_score(const FlowModel& model, const Tensor& latent) {
  return nll_scores(model, latent.rank() == 1 ? latent.reshaped({1, latent.size()}) : latent).at(0);
}

double score(const FlowModel& model, const repr::Encoder& encoder, const Tensor& sample) {
  return nll_score(model, encoder.encode(sample));
}

std::vector<double> score_batch(const FlowModel& model, const repr::Encoder& encoder, const Tensor& samples) {
  return nll_scores(model, encoder.encode(samples));
}

GaussianDensity GaussianDensity::fit(const Tensor& latents) {
  if (latents.rank() != 2 || latents.rows() < 2) throw ContractError("GDE needs at least two training latents");
  const std::size_t n = latents.rows(), d = latents.cols();
  GaussianDensity g;
  g.mean_.assign(d, 0.0);
  g.var_.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) g.mean_[j] += latents.at(i, j);
  for (auto& m : g.mean_) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) g.var_[j] += (latents.at(i, j) - g.mean_[j]) * (latents.at(i, j) - g.mean_[j]);
  bool singular = false;
  for (auto& v : g.var_) {
    v /= static_cast<double>(n);
    singular = singular || v < kDiagonalRidge;
    v += kDiagonalRidge;
  }
  if (singular) spdlog::info("GDE: near-singular covariance, diagonal regularized with {}", kDiagonalRidge);
  return g;
}

double GaussianDensity::score(std::span<const double> x) const {
  if (x.size() != mean_.size()) throw DimensionError("GDE latent width mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double diff = x[j] - mean_[j];
    s += diff * diff / var_[j] + std::log(2.0 * std::numbers::pi * var_[j]);
  }
  return 0.5 * s;
}

KernelDensity KernelDensity::fit(const Tensor& latents, double bandwidth) {
  if (latents.rank() != 2 || latents.rows() < 1) throw ContractError("KDE needs training latents");
  KernelDensity k;
  k.points_ = latents;
  if (bandwidth > 0.0) {
    k.bandwidth_ = bandwidth;
  } else {
    if (latents.rows() < 2) throw ContractError("automatic KDE bandwidth needs at least two latents");
    const auto g = GaussianDensity::fit(latents);
    double mean_std = 0.0;
    for (double v : g.variance()) mean_std += std::sqrt(v);
    mean_std /= static_cast<double>(g.variance().size());
    const double n = static_cast<double>(latents.rows());
    const double d = static_cast<double>(latents.cols());
    k.bandwidth_ = mean_std * std::pow(n, -1.0 / (d + 4.0));
  }
  return k;
}

double KernelDensity::score(std::span<const double> x) const {
  const std::size_t n = points_.rows(), d = points_.cols();
  if (x.size() != d) throw DimensionError("KDE latent width mismatch");
  const double h2 = bandwidth_ * bandwidth_;
  std::vector<double> logk(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += (x[j] - points_.at(i, j)) * (x[j] - points_.at(i, j));
    logk[i] = -sq / (2.0 * h2);
  }
  const double mx = *std::max_element(logk.begin(), logk.end());
  double s = 0.0;
  for (double v : logk) s += std::exp(v - mx);
  const double log_mean_kernel = mx + std::log(s) - std::log(static_cast<double>(n));
  return -log_mean_kernel + 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * h2);
}

double gde_score(const Tensor& train_latents, const Tensor& test_latent) {
  return GaussianDensity::fit(train_latents).score(test_latent.data());
}

double kde_score(const Tensor& train_latents, const Tensor& test_latent, double bandwidth) {
  if (!(bandwidth > 0.0)) throw ContractError("KDE bandwidth must be > 0");
  return KernelDensity::fit(train_latents, bandwidth).score(test_latent.data());
}

}  // namespace protofl::ocnf
