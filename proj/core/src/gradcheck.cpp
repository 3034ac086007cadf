#include "protofl/eval/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "protofl/diff/ops.hpp"
#include "protofl/errors.hpp"
#include "protofl/losses/losses.hpp"
#include "protofl/ocnf/flow.hpp"
#include "protofl/repr/encoder.hpp"
#include "protofl/rng.hpp"

namespace protofl::eval {
namespace {

using diff::Tensor;
using diff::Var;

Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng, double sd = 1.0, double mean = 0.0) {
  std::normal_distribution<double> nd(mean, sd);
  Tensor t(diff::Shape{rows, cols});
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

Tensor perturbed(const Tensor& x, Rng& rng, double sd) {
  Tensor out = x;
  std::normal_distribution<double> nd(0.0, sd);
  for (auto& v : out.data()) v += nd(rng);
  return out;
}

double evaluate(const repr::ParamVector& params, const Objective& objective) {
  diff::Tape tape;
  const auto bound = repr::bind(tape, params, false);
  return objective(tape, bound).value().item();
}

}  // namespace

GradcheckResult gradcheck(const std::string& name, repr::ParamVector params, const Objective& objective,
                          double step) {
  if (!(step > 0.0)) throw ContractError("gradcheck step must be positive");
  std::vector<double> analytic;
  {
    diff::Tape tape;
    const auto bound = repr::bind(tape, params, true);
    const Var loss = objective(tape, bound);
    analytic = repr::gather_gradients(tape.backward(loss), bound, params.layout());
  }
  GradcheckResult res{name, 0, analytic.size(), 0.0};
  auto values = params.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + step;
    const double up = evaluate(params, objective);
    values[i] = orig - step;
    const double down = evaluate(params, objective);
    values[i] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kGradcheckFloor});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic[i] - numeric) / denom);
  }
  return res;
}

std::vector<GradcheckResult> run_gradcheck_suite(const std::vector<std::uint64_t>& seeds, double step) {
  std::vector<GradcheckResult> out;
  for (const auto seed : seeds) {
    auto rng = make_stream(seed, "gradcheck");
    const std::size_t batch = 5;

    repr::EncoderConfig ec;
    ec.input_dim = 6;
    ec.hidden_dims = {8};
    ec.output_dim = 4;
    ec.groups = 2;
    const auto encoder = repr::Encoder::initialize(ec, rng);
    const Tensor x = normal_matrix(batch, ec.input_dim, rng);
    const Tensor x_hat = perturbed(x, rng, 0.3);
    const Tensor proto = normal_matrix(1, ec.output_dim, rng).reshaped({ec.output_dim});
    const Tensor a = normal_matrix(1, ec.output_dim, rng);

    auto views = [&](diff::Tape& tape, const std::vector<Var>& bound) {
      return std::pair{encoder.forward(bound, tape.constant(x)), encoder.forward(bound, tape.constant(x_hat))};
    };
    auto add = [&](GradcheckResult r) {
      r.seed = seed;
      out.push_back(std::move(r));
    };

    // The cosine primitive, differentiated through the encoder against a fixed vector.
    add(gradcheck("cosine", encoder.params(), [&](diff::Tape& tape, const std::vector<Var>& bound) {
      const Var r = encoder.forward(bound, tape.constant(x.reshaped({batch, ec.input_dim})));
      Tensor rep(diff::Shape{batch, ec.output_dim});
      for (std::size_t i = 0; i < batch; ++i) std::copy(a.data().begin(), a.data().end(), rep.row(i).begin());
      return diff::mean(losses::cosine_loss_rows(r, tape.constant(rep)));
    }, step));
    add(gradcheck("loss_p", encoder.params(), [&](diff::Tape& tape, const std::vector<Var>& bound) {
      const auto [r, r_hat] = views(tape, bound);
      return losses::loss_p(r, r_hat);
    }, step));
    add(gradcheck("loss_pd", encoder.params(), [&](diff::Tape& tape, const std::vector<Var>& bound) {
      const auto [r, r_hat] = views(tape, bound);
      return losses::loss_pd(r, r_hat, proto, 1.5);
    }, step));
    add(gradcheck("phase1_loss", encoder.params(), [&](diff::Tape& tape, const std::vector<Var>& bound) {
      const auto [r, r_hat] = views(tape, bound);
      return losses::phase1_loss(r, r_hat, proto, losses::Phase1Weights{0.3, 1.0});
    }, step));

    ocnf::FlowConfig fc;
    fc.dim = 4;
    fc.layers = 4;
    fc.hidden_dims = {8};
    auto flow = ocnf::FlowModel::initialize(fc, rng);
    // Zero output layers would hide every upstream gradient; randomize them.
    {
      std::normal_distribution<double> nd(0.0, 0.2);
      for (auto& v : flow.mutable_params().values()) v += nd(rng);
    }
    const Tensor r = normal_matrix(batch, fc.dim, rng);
    const Tensor r_hat = perturbed(r, rng, 0.3);
    auto flows = [&](diff::Tape& tape, const std::vector<Var>& bound) {
      return std::pair{flow.inverse(bound, tape.constant(r)), flow.inverse(bound, tape.constant(r_hat))};
    };
    add(gradcheck("loss_mle", flow.params(), [&](diff::Tape& tape, const std::vector<Var>& bound) {
      const auto [p, q] = flows(tape, bound);
      return losses::loss_mle(p.z, p.logdet);
    }, step));
    add(gradcheck("loss_reg", flow.params(), [&](diff::Tape& tape, const std::vector<Var>& bound) {
      const auto [p, q] = flows(tape, bound);
      return losses::loss_reg(p.z, q.z);
    }, step));
    add(gradcheck("phase2_loss", flow.params(), [&](diff::Tape& tape, const std::vector<Var>& bound) {
      const auto [p, q] = flows(tape, bound);
      return losses::phase2_loss(p.z, q.z, p.logdet, losses::Phase2Weights{0.5});
    }, step));
  }
  return out;
}

}  // namespace protofl::eval
