#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpl/adaptation/adapted_model.hpp"
#include "vpl/datahub/dataset.hpp"

namespace vpl {

enum class Optimizer { kSgd, kAdamW };

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  Optimizer optimizer = Optimizer::kAdamW;
  std::uint64_t seed = 0;
  std::size_t eval_every = 50;

  /// learning_rate == 0 is accepted (a no-op run); negative or non-finite is not.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct HistoryRow {
  std::size_t step = 0;     // 1-based step that closed the window
  double loss = 0.0;        // mean training loss over the window
  std::optional<double> eval_accuracy;
  std::string frozen_sha256;  // digest of every frozen parameter at this row
};

struct TrainHistory {
  std::vector<HistoryRow> rows;

  double final_loss() const { return rows.empty() ? 0.0 : rows.back().loss; }
};

/// SHA-256 over the ids and values of the parameters whose trainable flag
/// equals `trainable`, in set order.
std::string parameters_sha256(const ParameterSet& params, bool trainable);

/// CSV with header step,loss,eval_accuracy,frozen_sha256.
void write_history_csv(const std::filesystem::path& path, const TrainHistory& history);

/// Minimizes cross-entropy over `data` with minibatches drawn from
/// per-epoch permutations seeded by cfg.seed. Only parameters flagged
/// trainable are updated. Throws NumericError naming the step when the loss
/// stops being finite. `eval` (optional) is scored at every history row.
TrainHistory train(AdaptedModel& model, const LabeledImages& data, const TrainConfig& cfg,
                   const LabeledImages* eval = nullptr);

}  // namespace vpl
