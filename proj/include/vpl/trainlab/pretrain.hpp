#pragma once

#include "vpl/backbone/backbone.hpp"
#include "vpl/datahub/synthetic.hpp"
#include "vpl/trainlab/train.hpp"

namespace vpl {

struct PretrainResult {
  Backbone backbone;
  double val_accuracy = 0.0;
  TrainHistory history;
};

/// Trains a freshly initialized backbone end-to-end on a synthetic domain.
/// The last fifth of the domain's samples (by index) is held out for
/// validation. The backbone's head width follows domain.num_classes and its
/// domain_tag is domain.domain_tag.
PretrainResult pretrain_expert(const SyntheticDomainSpec& domain, BackboneConfig config,
                               const TrainConfig& train_cfg);

}  // namespace vpl
