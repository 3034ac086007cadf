#pragma once

#include <string>
#include <vector>

#include "protofl/diff/ops.hpp"
#include "protofl/repr/param_vector.hpp"
#include "protofl/rng.hpp"

// Building blocks shared by the encoder, the teacher and flow subnets. A
// linear layer is two consecutive layout entries: "<prefix>.weight" [in, out]
// and "<prefix>.bias" [out]; y = x W + b.
namespace protofl::repr {

// Appends a linear layer to `layout` and returns the weight entry index.
std::size_t add_linear(ParamLayout& layout, const std::string& prefix, std::size_t in, std::size_t out);

diff::Var linear(const diff::Var& x, const std::vector<diff::Var>& bound, std::size_t weight_entry);

// Uniform(-gain/sqrt(fan_in), gain/sqrt(fan_in)) for weight and bias.
void init_linear(ParamVector& params, std::size_t weight_entry, Rng& rng, double gain = 1.0);

// Sets weight and bias of a linear layer to zero.
void zero_linear(ParamVector& params, std::size_t weight_entry);

}  // namespace protofl::repr
