#include "vpl/adaptation/plan.hpp"

#include <algorithm>

#include "vpl/numcore/error.hpp"

namespace vpl {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kFull: return "full";
    case Method::kLinear: return "linear";
    case Method::kMlp3: return "mlp-3";
    case Method::kPartial1: return "partial-1";
    case Method::kSidetune: return "sidetune";
    case Method::kBias: return "bias";
    case Method::kAdapter: return "adapter";
    case Method::kVptShallow: return "vpt-shallow";
    case Method::kVptDeep: return "vpt-deep";
    case Method::kMoeAdapter: return "moe-adapter";
    case Method::kGmoeAdapter: return "gmoe-adapter";
  }
  return "?";
}

std::string method_list() {
  std::string s;
  for (Method m : kAllMethods) {
    if (!s.empty()) s += ", ";
    s += method_name(m);
  }
  return s;
}

Method parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  throw ConfigError("unknown method \"" + std::string(name) + "\"; valid methods: " +
                    method_list());
}

bool uses_two_backbones(Method m) {
  return m == Method::kMoeAdapter || m == Method::kGmoeAdapter;
}

std::vector<std::string> legal_hyper_keys(Method m) {
  switch (m) {
    case Method::kMlp3: return {"head_hidden"};
    case Method::kSidetune: return {"side_width"};
    case Method::kAdapter:
    case Method::kMoeAdapter: return {"bottleneck"};
    case Method::kVptShallow:
    case Method::kVptDeep: return {"prompt_len"};
    case Method::kGmoeAdapter: return {"bottleneck", "gate_init", "fusion_mode", "gate_param"};
    default: return {};
  }
}

namespace {

std::size_t positive(const nlohmann::json& v, const std::string& key, bool allow_zero = false) {
  if (!v.is_number_integer() || v.get<long long>() < (allow_zero ? 0 : 1)) {
    throw ConfigError("hyper \"" + key + "\" must be an integer >= " + (allow_zero ? "0" : "1"));
  }
  return v.get<std::size_t>();
}

}  // namespace

AdaptationPlan make_plan(Method m, const nlohmann::json& hyper) {
  AdaptationPlan plan;
  plan.method = m;
  if (hyper.is_null()) return plan;
  if (!hyper.is_object()) throw ConfigError("plan hyper must be a JSON object");
  const auto legal = legal_hyper_keys(m);
  PlanHyper& h = plan.hyper;
  for (const auto& [key, value] : hyper.items()) {
    if (std::find(legal.begin(), legal.end(), key) == legal.end()) {
      std::string allowed;
      for (const auto& k : legal) allowed += (allowed.empty() ? "" : ", ") + k;
      throw ConfigError("hyper key \"" + key + "\" is not legal for method " +
                        std::string(method_name(m)) +
                        (allowed.empty() ? " (it takes none)" : " (legal: " + allowed + ")"));
    }
    if (key == "prompt_len") {
      h.prompt_len = positive(value, key);
    } else if (key == "bottleneck") {
      h.bottleneck = positive(value, key);
    } else if (key == "side_width") {
      h.side_width = positive(value, key);
    } else if (key == "head_hidden") {
      h.head_hidden = positive(value, key, true);
    } else if (key == "gate_init") {
      if (!value.is_number()) throw ConfigError("hyper \"gate_init\" must be a number");
      h.gate_init = value.get<double>();
    } else if (key == "fusion_mode") {
      const auto s = value.get<std::string>();
      if (s == "final") {
        h.fusion_mode = FusionMode::kFinal;
      } else if (s == "per_block") {
        h.fusion_mode = FusionMode::kPerBlock;
      } else {
        throw ConfigError("hyper \"fusion_mode\" must be \"final\" or \"per_block\"");
      }
    } else if (key == "gate_param") {
      const auto s = value.get<std::string>();
      if (s == "raw") {
        h.gate_param = GateParam::kRaw;
      } else if (s == "sigmoid") {
        h.gate_param = GateParam::kSigmoid;
      } else {
        throw ConfigError("hyper \"gate_param\" must be \"raw\" or \"sigmoid\"");
      }
    }
  }
  if (h.gate_param == GateParam::kSigmoid && !(h.gate_init > 0.0 && h.gate_init < 1.0)) {
    throw ConfigError("hyper \"gate_init\" must lie in (0, 1) under sigmoid gating");
  }
  return plan;
}

AdaptationPlan plan_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("plan must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "method" && key != "hyper") throw ConfigError("plan: unknown key \"" + key + "\"");
  }
  if (!j.contains("method") || !j["method"].is_string()) {
    throw ConfigError("plan: \"method\" is required; valid methods: " + method_list());
  }
  return make_plan(parse_method(j["method"].get<std::string>()),
                   j.contains("hyper") ? j["hyper"] : nlohmann::json::object());
}

nlohmann::json plan_to_json(const AdaptationPlan& plan) {
  const PlanHyper& h = plan.hyper;
  nlohmann::json hyper = nlohmann::json::object();
  for (const auto& key : legal_hyper_keys(plan.method)) {
    if (key == "prompt_len") hyper[key] = h.prompt_len;
    if (key == "bottleneck") hyper[key] = h.bottleneck;
    if (key == "side_width") hyper[key] = h.side_width;
    if (key == "head_hidden") hyper[key] = h.head_hidden;
    if (key == "gate_init") hyper[key] = h.gate_init;
    if (key == "fusion_mode") hyper[key] = h.fusion_mode == FusionMode::kFinal ? "final" : "per_block";
    if (key == "gate_param") hyper[key] = h.gate_param == GateParam::kRaw ? "raw" : "sigmoid";
  }
  return {{"method", std::string(method_name(plan.method))}, {"hyper", hyper}};
}

AdaptationPlan reference_plan(Method m) {
  AdaptationPlan plan;
  plan.method = m;
  plan.hyper.prompt_len = m == Method::kVptDeep ? 5 : 50;
  plan.hyper.bottleneck = 40;
  plan.hyper.head_hidden = 912;
  plan.hyper.side_width = 7875;
  return plan;
}

}  // namespace vpl
