#pragma once

#include "protofl/diff/ops.hpp"
#include "protofl/diff/tensor.hpp"

// Training objectives. The Var overloads are differentiable and operate on
// row batches; the Tensor overloads evaluate the same formulas without a
// tape.
namespace protofl::losses {

using diff::Tensor;
using diff::Var;

struct Phase1Weights {
  // Weight of the view-agreement term; 1 - alpha weighs distillation.
  double alpha = 0.1;
  // Softmax temperature for the distillation KL.
  double temperature = 1.0;

  void validate() const;
};

struct Phase2Weights {
  double lambda = 0.01;

  void validate() const;
};

// 1 - cos(a, b) for two nonzero vectors; value in [0, 2]. Norms are clamped
// at 1e-12 and a warning is logged when the clamp triggers.
double cosine_loss(const Tensor& a, const Tensor& b);
// Per-row 1 - cos, [rows, D] x [rows, D] -> [rows].
Var cosine_loss_rows(const Var& a, const Var& b);

// KL(softmax(v / tau) || softmax(r_i / tau)) for each row r_i; v is a fixed
// target of length D.
Var prototype_kl_rows(const Var& logits, const Tensor& prototype, double temperature);
double prototype_kl(const Tensor& logits, const Tensor& prototype, double temperature);

// Mean over pairs of 1 - cos(r_i, r_hat_i).
Var loss_p(const Var& r, const Var& r_hat);
// Mean over pairs of KL(v || r_i) + KL(v || r_hat_i).
Var loss_pd(const Var& r, const Var& r_hat, const Tensor& prototype, double temperature);
// (1 - alpha) * loss_pd + alpha * loss_p. Terms with a zero coefficient are
// not evaluated.
Var phase1_loss(const Var& r, const Var& r_hat, const Tensor& prototype, const Phase1Weights& weights);

// Mean of ||z_i||^2 / 2 - logdet_i with additive constants dropped.
// Throws NumericError naming the first sample with a non-finite logdet.
Var loss_mle(const Var& z, const Var& logdet);
// Mean of 1 - cos(z_i, z_hat_i). DimensionError on batch size mismatch.
Var loss_reg(const Var& z, const Var& z_hat);
// loss_mle + lambda * loss_reg; the regularizer is skipped when lambda == 0.
Var phase2_loss(const Var& z, const Var& z_hat, const Var& logdet, const Phase2Weights& weights);

// Scalar combinations, exposed so callers can check the arithmetic directly.
double combine_phase1(double l_pd, double l_p, const Phase1Weights& weights);
double combine_phase2(double l_mle, double l_reg, const Phase2Weights& weights);

}  // namespace protofl::losses
