#pragma once

#include <cstddef>
#include <vector>

#include "vpl/adaptation/plan.hpp"
#include "vpl/backbone/backbone.hpp"

namespace vpl::cli {

struct BudgetChoice {
  double requested = 0.0;
  double achieved = 0.0;
  AdaptationPlan plan;
};

struct BudgetLimits {
  std::size_t max_prompt_len = 16;
  std::size_t max_bottleneck = 64;
};

/// Deterministic greedy: starting from the linear probe, grow the VPT-deep
/// prompt length; if the largest prompt still falls short, grow the adapter
/// bottleneck instead. The walk stops at the first candidate at or above the
/// budget and returns whichever of it and its predecessor is nearer (the
/// smaller one on ties).
BudgetChoice choose_budget_plan(double budget, const BackboneConfig& config,
                                std::size_t num_classes, std::size_t tasks,
                                const BudgetLimits& limits = {});

/// "1.01X"-style label used for table rows.
std::string budget_label(double budget);

}  // namespace vpl::cli
