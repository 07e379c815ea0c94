#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vpl/adaptation/plan.hpp"
#include "vpl/backbone/backbone.hpp"
#include "vpl/numcore/tape.hpp"

namespace vpl {

/// Learnable width-D gate. `raw` is the stored parameter; the effective
/// alpha is raw itself or sigmoid(raw).
struct GateVector {
  Tensor raw;
  GateParam param = GateParam::kRaw;

  Tensor effective() const;
};

/// ag + am
Tensor moe_fuse(const Tensor& ag, const Tensor& am);
/// alpha * ag + (1 - alpha) * am, alpha broadcast over rows.
Tensor gmoe_fuse(const Tensor& ag, const Tensor& am, const GateVector& gate);

Var moe_fuse(Var ag, Var am);
/// `alpha` is the effective gate (already squashed if sigmoid).
Var gmoe_fuse(Var ag, Var am, Var alpha);
/// Maps a raw gate parameter to its effective alpha on the tape.
Var effective_gate(Var raw, GateParam param);

/// One frozen expert backbone plus its adapter stack, both found under
/// `scope` ("<prefix><backbone id>" and "<prefix>adapter.<l>...").
struct ExpertBranch {
  const BackboneConfig* config = nullptr;
  ParamScope scope;
};

struct GateSet {
  std::vector<Parameter*> raw;  // one per fusion point
  GateParam param = GateParam::kRaw;
};

struct Head {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
};

/// Fused features for the two-expert methods. With `gates` empty the
/// experts are summed (MoE); otherwise gated. FusionMode::kFinal gates the
/// pooled features once; kPerBlock gates each block's pooled, final-normed
/// class token per expert stream and averages over blocks.
Var gmoe_features(Tape& tape, const Tensor& images, const ExpertBranch& general,
                  const ExpertBranch& medical, const GateSet* gates, FusionMode mode);

/// gmoe_features followed by the shared head.
Var gmoe_forward(Tape& tape, const Tensor& images, const ExpertBranch& general,
                 const ExpertBranch& medical, const GateSet* gates, FusionMode mode,
                 const Head& head);

struct GateStats {
  std::string id;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

/// Per-gate statistics of the effective alpha across its D dimensions.
std::vector<GateStats> gate_summary(const GateSet& gates);

}  // namespace vpl
