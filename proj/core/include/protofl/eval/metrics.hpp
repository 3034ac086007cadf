#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace protofl::eval {

// Scores follow "higher = more anomalous". The target (normal) class is the
// one a client was trained on.
struct ScoredExample {
  std::uint64_t id = 0;
  bool is_target = false;
  double score = 0.0;
};

// P(score_nontarget > score_target) + 1/2 P(tie), from rank statistics:
// 1.0 means every non-target scores above every target. ContractError unless
// both classes are present; NumericError on a non-finite score.
double auroc(std::span<const ScoredExample> scored);

// Equal error rate. At threshold th a target is falsely rejected when its
// score is > th and a non-target falsely accepted when its score is <= th.
// Thresholds sweep -inf and every distinct score; where no threshold makes
// the two rates equal, the crossing is interpolated linearly between the
// adjacent (FAR, FRR) points.
double eer(std::span<const ScoredExample> scored);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation (divide by n)
};
MeanStd mean_std(std::span<const double> values);

}  // namespace protofl::eval
