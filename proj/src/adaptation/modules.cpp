#include "vpl/adaptation/modules.hpp"

#include "vpl/numcore/error.hpp"

namespace vpl {

Var adapter_forward(Var h, const AdapterWeights& w) {
  return adapter(h, w.down_w, w.down_b, w.up_w, w.up_b);
}

Var vpt_inject(Var tokens, Var prompts, std::size_t layer, PromptMode mode, TokenLayout& layout) {
  const std::size_t p = prompts.value().rows();
  if (prompts.value().rank() != 2 || p == 0) {
    throw ConfigError("vpt_inject: at least one prompt token is required");
  }
  if (prompts.value().cols() != tokens.value().cols()) {
    throw DimensionError("vpt_inject: prompt width " + std::to_string(prompts.value().cols()) +
                         " differs from token width " + std::to_string(tokens.value().cols()));
  }
  std::vector<RowRef> map;
  if (layer == 0) {
    if (layout.prompts != 0) throw ConfigError("vpt_inject: prompts already present at layer 0");
    for (std::size_t n = 0; n < layout.batch; ++n) {
      const std::size_t base = n * layout.tokens;
      map.push_back({0, base});
      for (std::size_t i = 0; i < p; ++i) map.push_back({1, i});
      for (std::size_t i = 1; i < layout.tokens; ++i) map.push_back({0, base + i});
    }
    layout.tokens += p;
    layout.prompts = p;
    return gather_rows({tokens, prompts}, map);
  }
  if (mode == PromptMode::kShallow) {
    throw ConfigError("vpt_inject: shallow prompts are only inserted at layer 0, got layer " +
                      std::to_string(layer));
  }
  if (layout.prompts != p) {
    throw ConfigError("vpt_inject: layer " + std::to_string(layer) + " carries " +
                      std::to_string(layout.prompts) + " prompt slots, got " + std::to_string(p));
  }
  for (std::size_t n = 0; n < layout.batch; ++n) {
    const std::size_t base = n * layout.tokens;
    for (std::size_t i = 0; i < layout.tokens; ++i) {
      if (i >= 1 && i <= p) {
        map.push_back({1, i - 1});
      } else {
        map.push_back({0, base + i});
      }
    }
  }
  return gather_rows({tokens, prompts}, map);
}

Var side_net_forward(Var input, const SideNet& net) {
  Var h = gelu(add_row(matmul(input, net.fc1_w), net.fc1_b));
  return add_row(matmul(h, net.fc2_w), net.fc2_b);
}

Var sidetune_forward(Var side_input, Var frozen_feat, const SideNet& net, Var blend) {
  return gate_mix(frozen_feat, side_net_forward(side_input, net), sigmoid(blend));
}

Var AdapterInjector::after_block(std::size_t layer, Var tokens, const TokenLayout&) {
  Tape& t = *tokens.tape;
  const std::string base = "adapter." + std::to_string(layer) + ".";
  AdapterWeights w{t.param(scope_.at(base + "down.weight")), t.param(scope_.at(base + "down.bias")),
                   t.param(scope_.at(base + "up.weight")), t.param(scope_.at(base + "up.bias"))};
  return adapter_forward(tokens, w);
}

Var PromptInjector::before_block(std::size_t layer, Var tokens, TokenLayout& layout) {
  if (layer > 0 && mode_ == PromptMode::kShallow) return tokens;
  Tape& t = *tokens.tape;
  Var prompts = t.param(scope_.at("prompt." + std::to_string(layer)));
  return vpt_inject(tokens, prompts, layer, mode_, layout);
}

}  // namespace vpl
