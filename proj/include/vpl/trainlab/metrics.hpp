#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "vpl/adaptation/adapted_model.hpp"
#include "vpl/datahub/dataset.hpp"
#include "vpl/numcore/tensor.hpp"

namespace vpl {

/// Fraction of positions where preds == labels. MetricError when empty or
/// mismatched in length.
double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels);

/// Row-wise argmax of a B x K matrix; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

/// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(tie), via
/// tie-averaged ranks. Labels must be 0/1 with both present (MetricError
/// otherwise).
double auroc(const std::vector<double>& scores, const std::vector<std::size_t>& labels);

/// Unweighted mean of one-vs-rest AUROCs over the K columns of `scores`.
/// Every class must be present.
double auroc_macro(const Tensor& scores, const std::vector<std::size_t>& labels);

struct EvalResult {
  double accuracy = 0.0;
  std::optional<double> auroc;  // absent when some class is missing from the split
  double loss = 0.0;
  std::size_t n = 0;
  std::string split_name;
};

/// Scores the model on `data` in batches. Binary tasks rank by the logit
/// margin; multiclass tasks by softmax probabilities (macro one-vs-rest).
EvalResult evaluate(AdaptedModel& model, const LabeledImages& data, std::string split_name,
                    std::size_t batch_size = 256);

}  // namespace vpl
