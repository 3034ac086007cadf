#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "protofl/diff/tape.hpp"
#include "protofl/repr/param_vector.hpp"

namespace protofl::eval {

// Scalar objective over bound parameters, rebuilt on a fresh tape per call.
using Objective = std::function<diff::Var(diff::Tape&, const std::vector<diff::Var>& bound)>;

// Elementwise |analytic - numeric| / max(|analytic|, |numeric|, floor) with
// central differences of width 2 * step.
inline constexpr double kGradcheckFloor = 1e-5;

struct GradcheckResult {
  std::string name;
  std::uint64_t seed = 0;
  std::size_t parameters = 0;
  double max_rel_error = 0.0;
};

GradcheckResult gradcheck(const std::string& name, repr::ParamVector params, const Objective& objective,
                          double step = 1e-4);

// Every training objective (cosine primitive, view agreement, distillation,
// their combination, flow likelihood, flow regularizer, phase-2 combination)
// differentiated through the encoder or flow parameters that feed it.
std::vector<GradcheckResult> run_gradcheck_suite(const std::vector<std::uint64_t>& seeds, double step = 1e-4);

}  // namespace protofl::eval
