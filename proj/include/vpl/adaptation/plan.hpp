#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace vpl {

enum class Method {
  kFull,
  kLinear,
  kMlp3,
  kPartial1,
  kSidetune,
  kBias,
  kAdapter,
  kVptShallow,
  kVptDeep,
  kMoeAdapter,
  kGmoeAdapter,
};

inline constexpr std::array<Method, 11> kAllMethods = {
    Method::kFull,    Method::kLinear,     Method::kMlp3,     Method::kPartial1,
    Method::kSidetune, Method::kBias,      Method::kAdapter,  Method::kVptShallow,
    Method::kVptDeep, Method::kMoeAdapter, Method::kGmoeAdapter};

/// CLI / JSON spelling, e.g. "vpt-shallow", "gmoe-adapter".
std::string_view method_name(Method m);
/// Accepts the CLI spelling; ConfigError listing all valid names otherwise.
Method parse_method(std::string_view name);
std::string method_list();

bool uses_two_backbones(Method m);

enum class FusionMode { kFinal, kPerBlock };
enum class GateParam { kRaw, kSigmoid };

/// Method-specific hyperparameters. Only the keys legal for the plan's method
/// may appear in its JSON form.
struct PlanHyper {
  std::size_t prompt_len = 4;   // VPT: prompt tokens (per layer for deep)
  std::size_t bottleneck = 4;   // Adapter / MoE / GMoE: r
  std::size_t side_width = 32;  // Sidetune: hidden width of the side network
  std::size_t head_hidden = 0;  // Mlp3: hidden width, 0 means D
  double gate_init = 0.5;       // GMoE: initial effective alpha
  FusionMode fusion_mode = FusionMode::kFinal;
  GateParam gate_param = GateParam::kRaw;

  bool operator==(const PlanHyper&) const = default;
};

struct AdaptationPlan {
  Method method = Method::kLinear;
  PlanHyper hyper;

  bool operator==(const AdaptationPlan&) const = default;
};

std::vector<std::string> legal_hyper_keys(Method m);

/// {"method": "...", "hyper": {...}}; unknown or illegal keys raise ConfigError.
AdaptationPlan plan_from_json(const nlohmann::json& j);
/// Only the keys legal for the method are written.
nlohmann::json plan_to_json(const AdaptationPlan& plan);

AdaptationPlan make_plan(Method m, const nlohmann::json& hyper = nlohmann::json::object());

/// Hyperparameters that land each method on its published Total-Params
/// multiplier for a ViT-B/16 encoder (19 tasks, 50-class heads).
AdaptationPlan reference_plan(Method m);

}  // namespace vpl
