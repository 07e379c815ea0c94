#include "vpl/cli/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>

#include "vpl/numcore/error.hpp"
#include "vpl/numcore/rng.hpp"

namespace vpl::cli {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
      throw ConfigError(where + ": unknown key \"" + key + "\"");
    }
  }
}

TrainConfig parse_train(const json& j, const std::string& where) {
  if (j.is_object() && j.contains("seed")) {
    throw ConfigError(where + ": \"seed\" is derived from the root \"seed\" and cannot be set here");
  }
  return j.get<TrainConfig>();
}

json train_json(const TrainConfig& t) {
  json j = t;
  j.erase("seed");
  return j;
}

template <class T>
T get_field(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig parse_experiment(const json& j) {
  check_keys(j, "experiment config",
             {"backbone", "plan", "data", "train", "pretrain", "experts", "split", "tasks", "seed",
              "output_dir"});
  ExperimentConfig c;
  if (j.contains("backbone")) c.backbone = j["backbone"].get<BackboneConfig>();
  if (j.contains("plan")) c.plan = plan_from_json(j["plan"]);
  if (j.contains("data")) {
    const json& d = j["data"];
    check_keys(d, "data", {"synthetic", "manifest", "image_root", "domains", "flip"});
    if (d.contains("synthetic")) c.data.synthetic = d["synthetic"].get<SyntheticDomainSpec>();
    if (d.contains("manifest")) c.data.manifest = get_field<std::string>(d, "manifest", "data");
    if (d.contains("image_root")) c.data.image_root = get_field<std::string>(d, "image_root", "data");
    if (d.contains("flip")) c.data.flip = get_field<bool>(d, "flip", "data");
    if (d.contains("domains")) {
      if (!d["domains"].is_array()) throw ConfigError("data.domains must be an array");
      for (const auto& s : d["domains"]) c.data.domains.push_back(s.get<SyntheticDomainSpec>());
    }
    if (c.data.synthetic && !c.data.manifest.empty()) {
      throw ConfigError("data: give either \"synthetic\" or \"manifest\", not both");
    }
  }
  if (j.contains("train")) c.train = parse_train(j["train"], "train");
  if (j.contains("pretrain")) c.pretrain = parse_train(j["pretrain"], "pretrain");
  if (j.contains("experts")) {
    check_keys(j["experts"], "experts", {"general", "medical"});
    for (const auto& [tag, spec] : j["experts"].items()) {
      SyntheticDomainSpec s = spec.get<SyntheticDomainSpec>();
      if (spec.contains("domain_tag") && s.domain_tag != tag) {
        throw ConfigError("experts." + tag + ": domain_tag \"" + s.domain_tag + "\" does not match");
      }
      if (!spec.contains("domain_tag")) {
        s.domain_tag = tag;
        if (!spec.contains("subspace")) s.subspace = tag == "general" ? Subspace::kFirstHalf : Subspace::kSecondHalf;
      }
      c.experts[tag] = s;
    }
  }
  if (j.contains("split")) c.split = j["split"].get<SplitSpec>();
  if (j.contains("tasks")) {
    c.tasks = get_field<std::size_t>(j, "tasks", "experiment");
    if (c.tasks == 0) throw ConfigError("tasks must be >= 1");
  }
  if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed", "experiment");
  if (j.contains("output_dir")) c.output_dir = get_field<std::string>(j, "output_dir", "experiment");
  c.backbone.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_experiment(j);
}

json experiment_to_json(const ExperimentConfig& c) {
  json j;
  j["backbone"] = c.backbone;
  if (c.plan) j["plan"] = plan_to_json(*c.plan);
  json d = json::object();
  if (c.data.synthetic) d["synthetic"] = *c.data.synthetic;
  if (!c.data.manifest.empty()) d["manifest"] = c.data.manifest;
  if (!c.data.image_root.empty()) d["image_root"] = c.data.image_root;
  if (!c.data.domains.empty()) d["domains"] = c.data.domains;
  if (c.data.flip) d["flip"] = true;
  j["data"] = d;
  j["train"] = train_json(c.train);
  if (c.pretrain) j["pretrain"] = train_json(*c.pretrain);
  if (!c.experts.empty()) {
    json e = json::object();
    for (const auto& [tag, s] : c.experts) e[tag] = s;
    j["experts"] = e;
  }
  if (c.split) j["split"] = *c.split;
  j["tasks"] = c.tasks;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

LoadedData load_data(const DataConfig& data, const BackboneConfig& backbone,
                     const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  if (data.synthetic) {
    const SyntheticDomainSpec& s = *data.synthetic;
    if (s.image_size != backbone.image_size || s.channels != backbone.in_channels) {
      throw ConfigError("synthetic data is " + std::to_string(s.channels) + "x" +
                        std::to_string(s.image_size) + "x" + std::to_string(s.image_size) +
                        " but the backbone expects " + std::to_string(backbone.in_channels) + "x" +
                        std::to_string(backbone.image_size) + "x" +
                        std::to_string(backbone.image_size));
    }
    LoadedData out{SyntheticDomain(s).manifest(),
                   SampleSource(backbone.in_channels, backbone.image_size)};
    out.source.add_domain(s);
    return out;
  }
  if (data.manifest.empty()) throw ConfigError("data: no \"synthetic\" spec or \"manifest\" given");
  LoadedData out{load_manifest(resolve(data.manifest)),
                 SampleSource(backbone.in_channels, backbone.image_size,
                              data.image_root.empty() ? std::filesystem::path(resolve(data.manifest)).parent_path()
                                                      : resolve(data.image_root))};
  for (const auto& s : data.domains) out.source.add_domain(s);
  return out;
}

SplitSpec effective_split(const ExperimentConfig& c, const DatasetManifest& manifest) {
  if (c.split) return *c.split;
  SplitSpec s;
  s.seen_patients = manifest.patients().size();
  s.seed = derive_seed(c.seed, "split");
  return s;
}

SyntheticDomainSpec expert_domain(const ExperimentConfig& c, const std::string& tag) {
  if (tag != "general" && tag != "medical") {
    throw ConfigError("unknown expert domain \"" + tag + "\" (expected general or medical)");
  }
  auto it = c.experts.find(tag);
  if (it != c.experts.end()) return it->second;
  SyntheticDomainSpec s;
  s.domain_tag = tag;
  s.subspace = tag == "general" ? Subspace::kFirstHalf : Subspace::kSecondHalf;
  s.image_size = c.backbone.image_size;
  s.channels = c.backbone.in_channels;
  s.num_classes = 4;
  s.num_samples = 2048;
  s.class_mean_scale = 5.0;
  s.seed = derive_seed(c.seed, "domain:" + tag);
  return s;
}

}  // namespace vpl::cli
