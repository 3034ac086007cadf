#include "protofl/eval/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "protofl/errors.hpp"

namespace protofl::eval {
namespace {

struct Counts {
  std::size_t targets = 0;
  std::size_t nontargets = 0;
};

Counts validate(std::span<const ScoredExample> scored, const char* what) {
  Counts c;
  for (const auto& s : scored) {
    if (!std::isfinite(s.score)) throw NumericError(std::string(what) + ": non-finite score for sample " +
                                                    std::to_string(s.id));
    (s.is_target ? c.targets : c.nontargets)++;
  }
  if (c.targets == 0 || c.nontargets == 0) {
    throw ContractError(std::string(what) + " needs at least one target and one non-target example");
  }
  return c;
}

std::vector<ScoredExample> sorted_by_score(std::span<const ScoredExample> scored) {
  std::vector<ScoredExample> v(scored.begin(), scored.end());
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
  return v;
}

}  // namespace

double auroc(std::span<const ScoredExample> scored) {
  const auto counts = validate(scored, "auroc");
  const auto v = sorted_by_score(scored);
  // Twice the number of correctly ordered (target, non-target) pairs, with
  // ties counting one, keeps the accumulation in exact integers.
  std::uint64_t twice_correct = 0;
  std::uint64_t targets_below = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    std::uint64_t t = 0, nt = 0;
    while (j < v.size() && v[j].score == v[i].score) {
      (v[j].is_target ? t : nt)++;
      ++j;
    }
    twice_correct += nt * (2 * targets_below + t);
    targets_below += t;
    i = j;
  }
  return static_cast<double>(twice_correct) /
         (2.0 * static_cast<double>(counts.targets) * static_cast<double>(counts.nontargets));
}

double eer(std::span<const ScoredExample> scored) {
  const auto counts = validate(scored, "eer");
  const auto v = sorted_by_score(scored);
  const double nt = static_cast<double>(counts.targets);
  const double nn = static_cast<double>(counts.nontargets);

  // Threshold -inf: nothing accepted.
  double prev_far = 0.0, prev_frr = 1.0;
  std::size_t targets_le = 0, nontargets_le = 0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j].score == v[i].score) {
      (v[j].is_target ? targets_le : nontargets_le)++;
      ++j;
    }
    const double far = static_cast<double>(nontargets_le) / nn;
    const double frr = static_cast<double>(counts.targets - targets_le) / nt;
    if (far >= frr) {
      if (far == frr) return far;
      const double d_prev = prev_far - prev_frr;  // < 0
      const double d_cur = far - frr;              // > 0
      const double t = -d_prev / (d_cur - d_prev);
      return prev_far + t * (far - prev_far);
    }
    prev_far = far;
    prev_frr = frr;
    i = j;
  }
  // Unreachable: at the largest threshold FAR = 1 >= FRR = 0.
  return prev_far;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw ContractError("mean_std of an empty list");
  double m = 0.0;
  for (double v : values) m += v;
  m /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return {m, std::sqrt(ss / static_cast<double>(values.size()))};
}

}  // namespace protofl::eval
