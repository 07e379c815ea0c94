#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vpl/adaptation/plan.hpp"
#include "vpl/backbone/backbone.hpp"
#include "vpl/numcore/parameter.hpp"
#include "vpl/numcore/tape.hpp"

namespace vpl {

/// One entry of a plan's parameter layout.
struct ParamSpec {
  std::string id;
  Shape shape;
  bool trainable = false;
  /// True for parameters copied from a pretrained backbone.
  bool from_backbone = false;
  /// Index of the expert the parameter belongs to (0 for single-backbone plans).
  std::size_t expert = 0;

  std::size_t size() const { return shape_size(shape); }
};

/// Id prefix of expert `index` for a plan ("" for single-backbone methods,
/// "general." / "medical." for the two-expert methods).
std::string expert_prefix(Method m, std::size_t index);

/// Full parameter layout of the adapted model, without instantiating values.
std::vector<ParamSpec> plan_layout(const AdaptationPlan& plan, const BackboneConfig& config,
                                   std::size_t num_classes);

std::size_t trainable_count(const std::vector<ParamSpec>& layout);

/// A backbone (or two expert backbones) plus inserted modules and a task
/// head. Parameter::trainable is the freeze mask.
struct AdaptedModel {
  AdaptationPlan plan;
  BackboneConfig config;
  std::size_t num_classes = 0;
  std::vector<std::string> expert_tags;
  ParameterSet params;

  Var features(Tape& tape, const Tensor& images);
  Var logits(Tape& tape, const Tensor& images);

  std::map<std::string, bool> freeze_mask() const;
  std::size_t num_gates() const;
};

/// Validates the plan against the supplied backbones and instantiates the
/// adapted model. Inserted modules are seeded from `seed`: prompts and down
/// projections truncated normal (std 0.02), adapter up projections zero,
/// gates at hyper.gate_init.
AdaptedModel build_plan(const AdaptationPlan& plan, const std::vector<const Backbone*>& backbones,
                        std::size_t num_classes, std::uint64_t seed);

std::size_t trainable_count(const AdaptedModel& model);

// Adapted checkpoints reference their backbones by SHA-256 and by a path
// relative to the checkpoint, and store every trainable parameter.
struct ExpertRef {
  std::string path;
  std::string sha256;
  std::string domain_tag;
};

void save_adapted(const std::filesystem::path& path, const AdaptedModel& model,
                  const std::vector<ExpertRef>& experts);
AdaptedModel load_adapted(const std::filesystem::path& path);

}  // namespace vpl
