#include "vpl/adaptation/adapted_model.hpp"

#include <cmath>
#include <set>

#include "vpl/adaptation/modules.hpp"
#include "vpl/gmoe/gmoe.hpp"
#include "vpl/numcore/checkpoint.hpp"
#include "vpl/numcore/error.hpp"
#include "vpl/numcore/ops.hpp"
#include "vpl/numcore/rng.hpp"

namespace vpl {

namespace {

constexpr double kInitStd = 0.02;

bool backbone_trainable(Method m, const std::string& id, std::size_t depth) {
  switch (m) {
    case Method::kFull: return true;
    case Method::kPartial1:
      return id.starts_with("final_ln.") ||
             (depth > 0 && id.starts_with("block." + std::to_string(depth - 1) + "."));
    case Method::kBias: return id.ends_with(".bias");
    default: return false;
  }
}

std::size_t expert_count(Method m) { return uses_two_backbones(m) ? 2 : 1; }

BackboneConfig geometry(BackboneConfig c) {
  c.num_classes = 1;
  return c;
}

}  // namespace

std::string expert_prefix(Method m, std::size_t index) {
  if (!uses_two_backbones(m)) return "";
  return index == 0 ? "general." : "medical.";
}

std::vector<ParamSpec> plan_layout(const AdaptationPlan& plan, const BackboneConfig& config,
                                   std::size_t num_classes) {
  config.validate();
  const Method m = plan.method;
  const PlanHyper& h = plan.hyper;
  const std::size_t d = config.dim;
  std::vector<ParamSpec> out;
  auto inserted = [&](std::string id, Shape shape, std::size_t expert = 0) {
    out.push_back({std::move(id), std::move(shape), true, false, expert});
  };

  for (std::size_t e = 0; e < expert_count(m); ++e) {
    const std::string prefix = expert_prefix(m, e);
    for (auto& [name, shape] : backbone_shapes(config, false)) {
      out.push_back({prefix + name, shape, backbone_trainable(m, name, config.depth), true, e});
    }
    if (m == Method::kAdapter || m == Method::kMoeAdapter || m == Method::kGmoeAdapter) {
      if (h.bottleneck == 0) throw ConfigError("adapter bottleneck must be >= 1");
      const std::size_t r = h.bottleneck;
      for (std::size_t l = 0; l < config.depth; ++l) {
        const std::string base = prefix + "adapter." + std::to_string(l) + ".";
        inserted(base + "down.weight", {d, r}, e);
        inserted(base + "down.bias", {r}, e);
        inserted(base + "up.weight", {r, d}, e);
        inserted(base + "up.bias", {d}, e);
      }
    }
  }

  switch (m) {
    case Method::kVptShallow:
    case Method::kVptDeep: {
      if (h.prompt_len == 0) throw ConfigError("prompt_len must be >= 1");
      const std::size_t layers = m == Method::kVptDeep ? std::max<std::size_t>(config.depth, 1) : 1;
      for (std::size_t l = 0; l < layers; ++l) {
        inserted("prompt." + std::to_string(l), {h.prompt_len, d});
      }
      break;
    }
    case Method::kSidetune: {
      if (h.side_width == 0) throw ConfigError("side_width must be >= 1");
      inserted("side.fc1.weight", {config.patch_dim(), h.side_width});
      inserted("side.fc1.bias", {h.side_width});
      inserted("side.fc2.weight", {h.side_width, d});
      inserted("side.fc2.bias", {d});
      inserted("side.blend", {1});
      break;
    }
    case Method::kGmoeAdapter: {
      if (h.fusion_mode == FusionMode::kFinal) {
        inserted("gate.alpha", {d});
      } else {
        for (std::size_t l = 0; l < config.depth; ++l) {
          inserted("gate." + std::to_string(l) + ".alpha", {d});
        }
      }
      break;
    }
    default: break;
  }

  std::size_t head_in = d;
  if (m == Method::kMlp3) {
    const std::size_t hid = h.head_hidden == 0 ? d : h.head_hidden;
    inserted("head.fc1.weight", {d, hid});
    inserted("head.fc1.bias", {hid});
    inserted("head.fc2.weight", {hid, hid});
    inserted("head.fc2.bias", {hid});
    head_in = hid;
  }
  inserted("head.weight", {head_in, num_classes});
  inserted("head.bias", {num_classes});
  return out;
}

std::size_t trainable_count(const std::vector<ParamSpec>& layout) {
  std::size_t n = 0;
  for (const auto& s : layout) {
    if (s.trainable) n += s.size();
  }
  return n;
}

AdaptedModel build_plan(const AdaptationPlan& plan, const std::vector<const Backbone*>& backbones,
                        std::size_t num_classes, std::uint64_t seed) {
  const Method m = plan.method;
  const std::size_t need = expert_count(m);
  if (backbones.size() != need) {
    throw ConfigError("method " + std::string(method_name(m)) + " needs " + std::to_string(need) +
                      " backbone(s), got " + std::to_string(backbones.size()));
  }
  for (const Backbone* b : backbones) {
    if (b == nullptr) throw ConfigError("build_plan: null backbone");
  }
  if (need == 2) {
    if (backbones[0]->domain_tag == backbones[1]->domain_tag) {
      throw ConfigError("method " + std::string(method_name(m)) +
                        " needs experts with distinct domain tags, both are \"" +
                        backbones[0]->domain_tag + "\"");
    }
    if (!(geometry(backbones[0]->config) == geometry(backbones[1]->config))) {
      throw ConfigError("experts have different backbone geometry");
    }
  }
  if (num_classes == 0) throw ConfigError("build_plan: num_classes must be >= 1");

  AdaptedModel model;
  model.plan = plan;
  model.config = backbones[0]->config;
  model.config.num_classes = num_classes;
  model.num_classes = num_classes;
  for (const Backbone* b : backbones) model.expert_tags.push_back(b->domain_tag);

  Rng rng(seed);
  for (const ParamSpec& s : plan_layout(plan, model.config, num_classes)) {
    Tensor value(s.shape);
    if (s.from_backbone) {
      const std::string local = s.id.substr(expert_prefix(m, s.expert).size());
      value = backbones[s.expert]->params.at(local).value;
      if (value.shape() != s.shape) {
        throw ConfigError("backbone parameter " + local + " has shape " +
                          shape_string(value.shape()) + ", expected " + shape_string(s.shape));
      }
    } else if (s.id.find("gate.") != std::string::npos) {
      const double g = plan.hyper.gate_init;
      value.fill(plan.hyper.gate_param == GateParam::kSigmoid ? std::log(g / (1.0 - g)) : g);
    } else if (s.id == "side.blend" || s.id.ends_with(".bias") || s.id.ends_with("up.weight")) {
      // zeros: biases, blend (sigmoid 0.5) and adapter up projections
    } else {
      value = truncated_normal_tensor(rng, s.shape, kInitStd);
    }
    model.params.add(s.id, std::move(value), s.trainable);
  }
  return model;
}

std::size_t trainable_count(const AdaptedModel& model) { return model.params.trainable_count(); }

std::map<std::string, bool> AdaptedModel::freeze_mask() const {
  std::map<std::string, bool> mask;
  for (const auto& p : params) mask.emplace(p.id, p.trainable);
  return mask;
}

std::size_t AdaptedModel::num_gates() const {
  std::size_t n = 0;
  for (const auto& p : params) {
    if (p.id.starts_with("gate.")) ++n;
  }
  return n;
}

Var AdaptedModel::features(Tape& tape, const Tensor& images) {
  const Method m = plan.method;
  ParamScope root(params);
  switch (m) {
    case Method::kAdapter: {
      AdapterInjector inj(root);
      return forward_features(config, root, tape, images, &inj);
    }
    case Method::kVptShallow:
    case Method::kVptDeep: {
      PromptInjector inj(root, m == Method::kVptDeep ? PromptMode::kDeep : PromptMode::kShallow);
      return forward_features(config, root, tape, images, &inj);
    }
    case Method::kSidetune: {
      Var frozen = forward_features(config, root, tape, images);
      Var side_in = segment_mean(tape.constant(patchify(images, config)), config.num_patches());
      SideNet net{tape.param(params.at("side.fc1.weight")), tape.param(params.at("side.fc1.bias")),
                  tape.param(params.at("side.fc2.weight")), tape.param(params.at("side.fc2.bias"))};
      return sidetune_forward(side_in, frozen, net, tape.param(params.at("side.blend")));
    }
    case Method::kMoeAdapter:
    case Method::kGmoeAdapter: {
      ExpertBranch general{&config, ParamScope(params, expert_prefix(m, 0))};
      ExpertBranch medical{&config, ParamScope(params, expert_prefix(m, 1))};
      if (m == Method::kMoeAdapter) {
        return gmoe_features(tape, images, general, medical, nullptr, FusionMode::kFinal);
      }
      GateSet gates;
      gates.param = plan.hyper.gate_param;
      for (auto& p : params) {
        if (p.id.starts_with("gate.")) gates.raw.push_back(&p);
      }
      return gmoe_features(tape, images, general, medical, &gates, plan.hyper.fusion_mode);
    }
    default: return forward_features(config, root, tape, images);
  }
}

Var AdaptedModel::logits(Tape& tape, const Tensor& images) {
  Var f = features(tape, images);
  if (plan.method == Method::kMlp3) {
    f = gelu(add_row(matmul(f, tape.param(params.at("head.fc1.weight"))),
                     tape.param(params.at("head.fc1.bias"))));
    f = gelu(add_row(matmul(f, tape.param(params.at("head.fc2.weight"))),
                     tape.param(params.at("head.fc2.bias"))));
  }
  return predict(f, tape.param(params.at("head.weight")), tape.param(params.at("head.bias")));
}

void save_adapted(const std::filesystem::path& path, const AdaptedModel& model,
                  const std::vector<ExpertRef>& experts) {
  if (experts.size() != model.expert_tags.size()) {
    throw ConfigError("save_adapted: " + std::to_string(model.expert_tags.size()) +
                      " expert reference(s) required");
  }
  // Backbone paths are stored relative to the checkpoint so a directory of
  // artifacts can move as a unit and reruns elsewhere produce the same bytes.
  namespace fs = std::filesystem;
  const fs::path home = fs::weakly_canonical(fs::absolute(path)).parent_path();
  nlohmann::json refs = nlohmann::json::array();
  for (const auto& e : experts) {
    const fs::path rel = fs::weakly_canonical(fs::absolute(e.path)).lexically_relative(home);
    const std::string stored = rel.empty() ? e.path : rel.generic_string();
    refs.push_back({{"path", stored}, {"sha256", e.sha256}, {"domain_tag", e.domain_tag}});
  }
  nlohmann::json meta{{"format", "VPL1"},
                      {"kind", "adapted"},
                      {"version", 1},
                      {"plan", plan_to_json(model.plan)},
                      {"config", model.config},
                      {"num_classes", model.num_classes},
                      {"experts", refs}};
  std::vector<NamedTensor> tensors;
  for (const auto& p : model.params) {
    if (p.trainable) tensors.push_back({p.id, p.value});
  }
  write_checkpoint(path, meta, tensors);
}

AdaptedModel load_adapted(const std::filesystem::path& path) {
  CheckpointData data = read_checkpoint(path);
  if (data.meta.value("kind", "") != "adapted") {
    throw ParseError(path.string() + " is not an adapted-model checkpoint");
  }
  const AdaptationPlan plan = plan_from_json(data.meta.at("plan"));
  const auto num_classes = data.meta.at("num_classes").get<std::size_t>();
  std::vector<Backbone> backbones;
  for (const auto& ref : data.meta.at("experts")) {
    std::filesystem::path bpath = ref.at("path").get<std::string>();
    // Relative references resolve against the checkpoint's own directory
    // first, then against the working directory.
    if (bpath.is_relative()) {
      const auto beside = path.parent_path() / bpath;
      if (std::filesystem::exists(beside) || !std::filesystem::exists(bpath)) bpath = beside;
    }
    const auto want = ref.at("sha256").get<std::string>();
    const std::string bytes = read_file_bytes(bpath);
    if (sha256_hex(bytes) != want) {
      throw ParseError("backbone " + bpath.string() + " does not match the recorded content hash");
    }
    backbones.push_back(decode_backbone(bytes));
  }
  std::vector<const Backbone*> ptrs;
  for (const auto& b : backbones) ptrs.push_back(&b);
  AdaptedModel model = build_plan(plan, ptrs, num_classes, 0);
  for (auto& p : model.params) {
    if (!p.trainable) continue;
    const Tensor& v = data.tensor(p.id);
    if (v.shape() != p.value.shape()) {
      throw ParseError("adapted checkpoint: " + p.id + " has shape " + shape_string(v.shape()));
    }
    p.value = v;
  }
  return model;
}

}  // namespace vpl
