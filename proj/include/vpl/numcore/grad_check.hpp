#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vpl/numcore/parameter.hpp"
#include "vpl/numcore/tape.hpp"

namespace vpl {

struct GradCheckEntry {
  std::string id;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double tolerance = 0.0;

  bool passed() const;
  /// Ids of parameters whose max relative error exceeds the tolerance.
  std::vector<std::string> failures() const;
  const GradCheckEntry* find(const std::string& id) const;
};

/// Builds the loss on a fresh tape and returns the scalar loss node.
using LossFn = std::function<Var(Tape&)>;

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares the analytic gradient of every trainable parameter entry with a
/// central finite difference of size `step`. Frozen parameters are skipped.
/// Parameter values are restored exactly afterwards.
GradCheckReport grad_check(ParameterSet& params, const LossFn& loss, double step = 1e-5,
                           double tol = 1e-4);

}  // namespace vpl
