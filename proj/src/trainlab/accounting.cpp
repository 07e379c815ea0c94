#include "vpl/trainlab/accounting.hpp"

#include "vpl/numcore/error.hpp"

namespace vpl {

namespace {

// The primary backbone is shared unless every one of its parameters trains.
std::size_t shared_size(const std::vector<ParamSpec>& layout, std::size_t encoder) {
  for (const auto& s : layout) {
    if (s.from_backbone && s.expert == 0 && !s.trainable) return encoder;
  }
  return 0;
}

}  // namespace

ParamAccount account_params(const AdaptationPlan& plan, const BackboneConfig& config,
                            std::size_t num_classes, std::size_t tasks) {
  if (tasks == 0) throw ConfigError("task count must be >= 1");
  const auto layout = plan_layout(plan, config, num_classes);
  ParamAccount a;
  a.reference = encoder_param_count(config);
  a.shared = shared_size(layout, a.reference);
  a.per_task = trainable_count(layout);
  a.tasks = tasks;
  a.multiplier = (static_cast<double>(a.shared) +
                  static_cast<double>(tasks) * static_cast<double>(a.per_task)) /
                 static_cast<double>(a.reference);
  return a;
}

double total_params_multiplier(const AdaptationPlan& plan, const BackboneConfig& config,
                               std::size_t num_classes, std::size_t tasks) {
  return account_params(plan, config, num_classes, tasks).multiplier;
}

double total_params_multiplier(const std::vector<const AdaptedModel*>& tasks) {
  if (tasks.empty()) throw ConfigError("total_params_multiplier: no tasks");
  const AdaptedModel& first = *tasks.front();
  const std::size_t reference = encoder_param_count(first.config);
  std::size_t shared = 0;
  double owned = 0.0;
  for (const AdaptedModel* m : tasks) {
    if (encoder_param_count(m->config) != reference) {
      throw ConfigError("total_params_multiplier: tasks use different backbone sizes");
    }
    const auto layout = plan_layout(m->plan, m->config, m->num_classes);
    shared = std::max(shared, shared_size(layout, reference));
    owned += static_cast<double>(m->params.trainable_count());
  }
  return (static_cast<double>(shared) + owned) / static_cast<double>(reference);
}

}  // namespace vpl
