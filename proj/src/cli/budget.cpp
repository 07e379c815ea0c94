#include "vpl/cli/budget.hpp"

#include <cmath>

#include "vpl/numcore/error.hpp"
#include "vpl/trainlab/accounting.hpp"
#include "vpl/trainlab/results.hpp"

namespace vpl::cli {

BudgetChoice choose_budget_plan(double budget, const BackboneConfig& config,
                                std::size_t num_classes, std::size_t tasks,
                                const BudgetLimits& limits) {
  if (!(budget > 0.0) || !std::isfinite(budget)) {
    throw ConfigError("budget must be a positive multiplier, got " + strfmt("%g", budget));
  }
  std::vector<AdaptationPlan> walk{make_plan(Method::kLinear)};
  for (std::size_t p = 1; p <= limits.max_prompt_len; ++p) {
    AdaptationPlan plan = make_plan(Method::kVptDeep);
    plan.hyper.prompt_len = p;
    walk.push_back(plan);
  }
  for (std::size_t r = 1; r <= limits.max_bottleneck; ++r) {
    AdaptationPlan plan = make_plan(Method::kAdapter);
    plan.hyper.bottleneck = r;
    walk.push_back(plan);
  }

  BudgetChoice prev{budget, total_params_multiplier(walk[0], config, num_classes, tasks), walk[0]};
  for (std::size_t i = 1; i < walk.size(); ++i) {
    const double m = total_params_multiplier(walk[i], config, num_classes, tasks);
    // The first adapter can undercut the largest prompt; keep the best
    // candidate below the budget and walk on.
    if (m < budget) {
      if (m >= prev.achieved) prev = {budget, m, walk[i]};
      continue;
    }
    if (prev.achieved >= budget) break;
    const BudgetChoice next{budget, m, walk[i]};
    return budget - prev.achieved <= m - budget ? prev : next;
  }
  return prev;
}

std::string budget_label(double budget) { return strfmt("%.2fX", budget); }

}  // namespace vpl::cli
