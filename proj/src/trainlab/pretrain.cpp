#include "vpl/trainlab/pretrain.hpp"

#include <numeric>

#include "vpl/adaptation/adapted_model.hpp"
#include "vpl/numcore/error.hpp"
#include "vpl/numcore/rng.hpp"
#include "vpl/trainlab/metrics.hpp"

namespace vpl {

PretrainResult pretrain_expert(const SyntheticDomainSpec& domain, BackboneConfig config,
                               const TrainConfig& train_cfg) {
  domain.validate();
  config.num_classes = domain.num_classes;
  config.validate();
  if (domain.image_size != config.image_size || domain.channels != config.in_channels) {
    throw ConfigError("domain \"" + domain.domain_tag + "\" images do not match the backbone geometry");
  }

  const LabeledImages all = synth_images(domain);
  const std::size_t n_val = std::max<std::size_t>(1, all.size() / 5);
  std::vector<std::size_t> train_idx(all.size() - n_val), val_idx(n_val);
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(val_idx.begin(), val_idx.end(), train_idx.size());
  const LabeledImages train_set = all.subset(train_idx);
  const LabeledImages val_set = all.subset(val_idx);

  Backbone init = init_backbone(config, derive_seed(train_cfg.seed, "init"), domain.domain_tag);
  AdaptedModel model = build_plan(make_plan(Method::kFull), {&init}, domain.num_classes,
                                  derive_seed(train_cfg.seed, "plan"));
  PretrainResult out;
  out.history = train(model, train_set, train_cfg);
  out.val_accuracy = evaluate(model, val_set, "val").accuracy;

  out.backbone = std::move(init);
  for (Parameter& p : out.backbone.params) p.value = model.params.at(p.id).value;
  return out;
}

}  // namespace vpl
