#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpl/adaptation/plan.hpp"
#include "vpl/backbone/backbone.hpp"
#include "vpl/datahub/dataset.hpp"
#include "vpl/datahub/split.hpp"
#include "vpl/datahub/synthetic.hpp"
#include "vpl/trainlab/train.hpp"

namespace vpl::cli {

/// Either one synthetic domain, or a manifest whose refs resolve against
/// `image_root` and the synthetic `domains`.
struct DataConfig {
  std::optional<SyntheticDomainSpec> synthetic;
  std::string manifest;
  std::string image_root;
  std::vector<SyntheticDomainSpec> domains;
  bool flip = false;
};

struct ExperimentConfig {
  BackboneConfig backbone = BackboneConfig::tiny();
  std::optional<AdaptationPlan> plan;
  DataConfig data;
  TrainConfig train;
  std::optional<TrainConfig> pretrain;
  std::map<std::string, SyntheticDomainSpec> experts;
  std::optional<SplitSpec> split;
  std::size_t tasks = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
};

/// Strict parse: unknown keys anywhere raise ConfigError. Seeds of the train
/// blocks come from the root "seed" and may not be set directly.
ExperimentConfig parse_experiment(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);
nlohmann::json experiment_to_json(const ExperimentConfig& c);

/// Loaded dataset: manifest plus a source able to resolve its refs.
struct LoadedData {
  DatasetManifest manifest;
  SampleSource source;
};

LoadedData load_data(const DataConfig& data, const BackboneConfig& backbone,
                     const std::filesystem::path& base_dir = {});

/// The configured split, or every patient seen when none is given.
SplitSpec effective_split(const ExperimentConfig& c, const DatasetManifest& manifest);

/// Synthetic spec of the pretraining domain `tag`: the configured one, or a
/// default domain matched to the backbone geometry.
SyntheticDomainSpec expert_domain(const ExperimentConfig& c, const std::string& tag);

}  // namespace vpl::cli
