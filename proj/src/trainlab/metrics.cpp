#include "vpl/trainlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vpl/numcore/error.hpp"
#include "vpl/numcore/ops.hpp"

namespace vpl {

double accuracy(const std::vector<std::size_t>& preds, const std::vector<std::size_t>& labels) {
  if (preds.size() != labels.size()) {
    throw MetricError("accuracy: " + std::to_string(preds.size()) + " predictions for " +
                      std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw MetricError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += preds[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t k = logits.cols();
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = logits.raw() + r * k;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

double auroc(const std::vector<double>& scores, const std::vector<std::size_t>& labels) {
  if (scores.size() != labels.size()) {
    throw MetricError("auroc: " + std::to_string(scores.size()) + " scores for " +
                      std::to_string(labels.size()) + " labels");
  }
  std::size_t pos = 0;
  for (std::size_t y : labels) {
    if (y > 1) throw MetricError("auroc: binary labels must be 0 or 1, got " + std::to_string(y));
    pos += y;
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    throw MetricError("auroc is undefined when only one class is present");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw MetricError("auroc: NaN score");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based, tie-averaged) ranks of the positives, kept doubled so
  // every partial sum is an exact integer.
  std::size_t rank2_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::size_t avg2 = (i + 1) + j;  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) rank2_pos += avg2;
    }
    i = j;
  }
  const double u = static_cast<double>(rank2_pos) / 2.0 -
                   static_cast<double>(pos) * static_cast<double>(pos + 1) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auroc_macro(const Tensor& scores, const std::vector<std::size_t>& labels) {
  const std::size_t k = scores.cols();
  if (scores.rank() != 2 || scores.rows() != labels.size()) {
    throw MetricError("auroc_macro: scores " + shape_string(scores.shape()) + " do not match " +
                      std::to_string(labels.size()) + " labels");
  }
  if (k < 2) throw MetricError("auroc_macro: need at least two classes");
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> s(labels.size());
    std::vector<std::size_t> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= k) throw MetricError("auroc_macro: label out of range");
      s[i] = scores.at(i, c);
      y[i] = labels[i] == c ? 1 : 0;
    }
    total += auroc(s, y);
  }
  return total / static_cast<double>(k);
}

EvalResult evaluate(AdaptedModel& model, const LabeledImages& data, std::string split_name,
                    std::size_t batch_size) {
  if (data.size() == 0) throw MetricError("cannot evaluate on empty split \"" + split_name + "\"");
  if (batch_size == 0) batch_size = data.size();
  const std::size_t k = model.num_classes;
  Tensor logits({data.size(), k});
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const LabeledImages mb = data.subset(idx);
    Tape tape;
    Var out = model.logits(tape, mb.images);
    loss_sum += cross_entropy(out, mb.labels).value()[0] * static_cast<double>(idx.size());
    std::copy_n(out.value().raw(), idx.size() * k, logits.raw() + start * k);
  }

  EvalResult r;
  r.split_name = std::move(split_name);
  r.n = data.size();
  r.loss = loss_sum / static_cast<double>(data.size());
  r.accuracy = accuracy(argmax_rows(logits), data.labels);

  std::vector<bool> present(k, false);
  for (std::size_t y : data.labels) present[y] = true;
  if (k >= 2 && std::all_of(present.begin(), present.end(), [](bool b) { return b; })) {
    if (k == 2) {
      std::vector<double> margin(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) margin[i] = logits.at(i, 1) - logits.at(i, 0);
      r.auroc = auroc(margin, data.labels);
    } else {
      r.auroc = auroc_macro(softmax(logits, 1), data.labels);
    }
  }
  return r;
}

}  // namespace vpl
