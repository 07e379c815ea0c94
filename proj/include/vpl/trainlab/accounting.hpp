#pragma once

#include <cstddef>
#include <vector>

#include "vpl/adaptation/adapted_model.hpp"

namespace vpl {

/// Stored-parameter bookkeeping across T tasks. The primary backbone encoder
/// is stored once and shared unless the method trains all of it (Full), in
/// which case every task owns a copy. A second expert backbone is treated as
/// shared infrastructure and not counted.
struct ParamAccount {
  std::size_t reference = 0;   // encoder size (no head)
  std::size_t shared = 0;      // frozen backbone stored once
  std::size_t per_task = 0;    // tunable parameters each task owns, head included
  std::size_t tasks = 0;
  double multiplier = 0.0;
};

ParamAccount account_params(const AdaptationPlan& plan, const BackboneConfig& config,
                            std::size_t num_classes, std::size_t tasks);

/// (shared + sum of per-task tunables) / encoder size over a list of per-task
/// models sharing one backbone geometry. ConfigError when empty.
double total_params_multiplier(const std::vector<const AdaptedModel*>& tasks);

/// Same quantity for T identical tasks. ConfigError when tasks == 0.
double total_params_multiplier(const AdaptationPlan& plan, const BackboneConfig& config,
                               std::size_t num_classes, std::size_t tasks);

}  // namespace vpl
