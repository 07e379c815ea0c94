#include "vpl/gmoe/gmoe.hpp"

#include <algorithm>

#include "vpl/adaptation/modules.hpp"
#include "vpl/numcore/error.hpp"
#include "vpl/numcore/ops.hpp"

namespace vpl {

Tensor GateVector::effective() const {
  Tensor a = raw;
  if (param == GateParam::kSigmoid) {
    for (auto& v : a.data()) v = sigmoid_value(v);
  }
  return a;
}

Tensor moe_fuse(const Tensor& ag, const Tensor& am) {
  Tape tape;
  return moe_fuse(tape.constant(ag), tape.constant(am)).value();
}

Tensor gmoe_fuse(const Tensor& ag, const Tensor& am, const GateVector& gate) {
  if (gate.raw.size() != ag.cols()) {
    throw DimensionError("gmoe_fuse: gate width " + std::to_string(gate.raw.size()) +
                         " does not match embedding width " + std::to_string(ag.cols()));
  }
  Tape tape;
  return gmoe_fuse(tape.constant(ag), tape.constant(am), tape.constant(gate.effective())).value();
}

Var moe_fuse(Var ag, Var am) { return add(ag, am); }

Var gmoe_fuse(Var ag, Var am, Var alpha) {
  if (alpha.value().size() != ag.value().cols()) {
    throw DimensionError("gmoe_fuse: gate width " + std::to_string(alpha.value().size()) +
                         " does not match embedding width " + std::to_string(ag.value().cols()));
  }
  return gate_mix(ag, am, alpha);
}

Var effective_gate(Var raw, GateParam param) {
  return param == GateParam::kSigmoid ? sigmoid(raw) : raw;
}

namespace {

// Adapter stack that also records each block's pooled, final-normed row.
class CapturingAdapters : public AdapterInjector {
 public:
  CapturingAdapters(const BackboneConfig& config, ParamScope scope)
      : AdapterInjector(scope), config_(config), scope_(std::move(scope)) {}

  Var after_block(std::size_t layer, Var tokens, const TokenLayout& layout) override {
    Var out = AdapterInjector::after_block(layer, tokens, layout);
    Tape& t = *out.tape;
    Var pooled = pool_tokens(config_, out, layout);
    captured.push_back(layer_norm(pooled, t.param(scope_.at("final_ln.weight")),
                                  t.param(scope_.at("final_ln.bias"))));
    return out;
  }

  std::vector<Var> captured;

 private:
  const BackboneConfig& config_;
  ParamScope scope_;
};

}  // namespace

Var gmoe_features(Tape& tape, const Tensor& images, const ExpertBranch& general,
                  const ExpertBranch& medical, const GateSet* gates, FusionMode mode) {
  if (general.config == nullptr || medical.config == nullptr) {
    throw ConfigError("gmoe: expert branch without a backbone config");
  }
  if (!(*general.config == *medical.config)) {
    throw ConfigError("gmoe: experts have different backbone configs");
  }
  const BackboneConfig& cfg = *general.config;
  if (gates == nullptr || mode == FusionMode::kFinal) {
    AdapterInjector ig(general.scope), im(medical.scope);
    Var fg = forward_features(cfg, general.scope, tape, images, &ig);
    Var fm = forward_features(cfg, medical.scope, tape, images, &im);
    if (gates == nullptr) return moe_fuse(fg, fm);
    if (gates->raw.size() != 1) throw ConfigError("gmoe: final fusion takes exactly one gate");
    return gmoe_fuse(fg, fm, effective_gate(tape.param(*gates->raw[0]), gates->param));
  }
  if (gates->raw.size() != cfg.depth) {
    throw ConfigError("gmoe: per-block fusion needs " + std::to_string(cfg.depth) +
                      " gates, got " + std::to_string(gates->raw.size()));
  }
  CapturingAdapters cg(cfg, general.scope), cm(cfg, medical.scope);
  forward_features(cfg, general.scope, tape, images, &cg);
  forward_features(cfg, medical.scope, tape, images, &cm);
  Var fused = gmoe_fuse(cg.captured[0], cm.captured[0],
                        effective_gate(tape.param(*gates->raw[0]), gates->param));
  for (std::size_t l = 1; l < cfg.depth; ++l) {
    fused = add(fused, gmoe_fuse(cg.captured[l], cm.captured[l],
                                 effective_gate(tape.param(*gates->raw[l]), gates->param)));
  }
  return cfg.depth > 1 ? scale(fused, 1.0 / static_cast<double>(cfg.depth)) : fused;
}

Var gmoe_forward(Tape& tape, const Tensor& images, const ExpertBranch& general,
                 const ExpertBranch& medical, const GateSet* gates, FusionMode mode,
                 const Head& head) {
  Var f = gmoe_features(tape, images, general, medical, gates, mode);
  return predict(f, tape.param(*head.weight), tape.param(*head.bias));
}

std::vector<GateStats> gate_summary(const GateSet& gates) {
  std::vector<GateStats> out;
  for (const Parameter* p : gates.raw) {
    const Tensor a = GateVector{p->value, gates.param}.effective();
    GateStats s;
    s.id = p->id;
    if (!a.empty()) {
      s.min = *std::min_element(a.data().begin(), a.data().end());
      s.max = *std::max_element(a.data().begin(), a.data().end());
      double sum = 0.0;
      for (double v : a.data()) sum += v;
      s.mean = sum / static_cast<double>(a.size());
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace vpl
