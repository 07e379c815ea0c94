#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vpl/backbone/backbone.hpp"
#include "vpl/numcore/ops.hpp"

// Building blocks inserted into a frozen backbone.

namespace vpl {

struct AdapterWeights {
  Var down_w;  // D x r
  Var down_b;  // r
  Var up_w;    // r x D
  Var up_b;    // D
};

/// h + up(gelu(down(h))).
Var adapter_forward(Var h, const AdapterWeights& w);

enum class PromptMode { kShallow, kDeep };

/// Shallow: at layer 0 inserts the P prompt rows right after each class
/// token. Deep: additionally, at every later layer the P prompt slots are
/// overwritten with that layer's prompts. Updates `layout`.
Var vpt_inject(Var tokens, Var prompts, std::size_t layer, PromptMode mode, TokenLayout& layout);

struct SideNet {
  Var fc1_w, fc1_b, fc2_w, fc2_b;
};

/// Two-layer GELU MLP of the side branch.
Var side_net_forward(Var input, const SideNet& net);

/// sigmoid(blend) * frozen_feat + (1 - sigmoid(blend)) * side_net(side_input).
Var sidetune_forward(Var side_input, Var frozen_feat, const SideNet& net, Var blend);

/// Applies one residual adapter after every block; ids are
/// "<prefix>adapter.<layer>.{down,up}.{weight,bias}".
class AdapterInjector : public Injector {
 public:
  explicit AdapterInjector(ParamScope scope) : scope_(std::move(scope)) {}
  Var after_block(std::size_t layer, Var tokens, const TokenLayout& layout) override;

 private:
  ParamScope scope_;
};

/// Inserts "prompt.0" at layer 0 and, in deep mode, "prompt.<layer>" later.
class PromptInjector : public Injector {
 public:
  PromptInjector(ParamScope scope, PromptMode mode) : scope_(std::move(scope)), mode_(mode) {}
  Var before_block(std::size_t layer, Var tokens, TokenLayout& layout) override;

 private:
  ParamScope scope_;
  PromptMode mode_;
};

}  // namespace vpl
