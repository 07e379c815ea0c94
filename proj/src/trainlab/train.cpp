#include "vpl/trainlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vpl/numcore/checkpoint.hpp"
#include "vpl/numcore/error.hpp"
#include "vpl/numcore/ops.hpp"
#include "vpl/numcore/rng.hpp"
#include "vpl/trainlab/metrics.hpp"
#include "vpl/trainlab/results.hpp"

namespace vpl {

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("train: steps must be >= 1");
  if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning_rate must be finite and >= 0");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw ConfigError("train: weight_decay must be finite and >= 0");
  }
  if (eval_every == 0) throw ConfigError("train: eval_every must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"optimizer", c.optimizer == Optimizer::kSgd ? "sgd" : "adamw"},
       {"seed", c.seed},
       {"eval_every", c.eval_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  static const char* kKeys[] = {"steps", "batch_size", "learning_rate", "weight_decay",
                                "optimizer", "seed", "eval_every"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw ConfigError("train config: unknown key \"" + key + "\"");
    }
  }
  TrainConfig d;
  try {
    c.steps = j.value("steps", d.steps);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.seed = j.value("seed", d.seed);
    c.eval_every = j.value("eval_every", d.eval_every);
    const std::string opt = j.value("optimizer", std::string("adamw"));
    if (opt == "sgd") {
      c.optimizer = Optimizer::kSgd;
    } else if (opt == "adamw") {
      c.optimizer = Optimizer::kAdamW;
    } else {
      throw ConfigError("train config: optimizer must be \"sgd\" or \"adamw\", got \"" + opt + "\"");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
}

std::string parameters_sha256(const ParameterSet& params, bool trainable) {
  std::string bytes;
  for (const Parameter& p : params) {
    if (p.trainable != trainable) continue;
    bytes += p.id;
    bytes.push_back('\0');
    bytes.append(reinterpret_cast<const char*>(p.value.raw()), p.value.size() * sizeof(double));
  }
  return sha256_hex(bytes);
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "step,loss,eval_accuracy,frozen_sha256\n";
  for (const auto& r : history.rows) {
    out << r.step << ',' << strfmt("%.9g", r.loss) << ',';
    if (r.eval_accuracy) out << strfmt("%.6f", *r.eval_accuracy);
    out << ',' << r.frozen_sha256 << '\n';
  }
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Only trainable parameters are ever registered, so frozen values cannot be
// written by construction.
class Optim {
 public:
  Optim(ParameterSet& params, const TrainConfig& cfg) : cfg_(cfg) {
    for (Parameter& p : params) {
      if (!p.trainable) continue;
      slots_.push_back({&p, Tensor(p.value.shape()), Tensor(p.value.shape())});
    }
  }

  void step(std::size_t t) {
    const double lr = cfg_.learning_rate;
    if (lr == 0.0) return;
    const double wd = cfg_.weight_decay;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (Slot& s : slots_) {
      double* w = s.param->value.raw();
      const bool has_grad = s.param->grad.size() == s.param->value.size();
      const double* g = has_grad ? s.param->grad.raw() : nullptr;
      const std::size_t n = s.param->value.size();
      if (cfg_.optimizer == Optimizer::kSgd) {
        for (std::size_t i = 0; i < n; ++i) {
          w[i] -= lr * ((g ? g[i] : 0.0) + wd * w[i]);
        }
      } else {
        double* m = s.m.raw();
        double* v = s.v.raw();
        for (std::size_t i = 0; i < n; ++i) {
          const double gi = g ? g[i] : 0.0;
          m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
          v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
          const double mh = m[i] / bc1;
          const double vh = v[i] / bc2;
          w[i] -= lr * (mh / (std::sqrt(vh) + kAdamEps) + wd * w[i]);
        }
      }
    }
  }

 private:
  struct Slot {
    Parameter* param;
    Tensor m;
    Tensor v;
  };
  TrainConfig cfg_;
  std::vector<Slot> slots_;
};

// Cycles through seeded permutations of [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
    reshuffle();
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[rng_() % i]);
    }
    pos_ = 0;
  }

  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

TrainHistory train(AdaptedModel& model, const LabeledImages& data, const TrainConfig& cfg,
                   const LabeledImages* eval) {
  cfg.validate();
  if (data.size() == 0) throw ConfigError("train: empty training set");
  for (std::size_t y : data.labels) {
    if (y >= model.num_classes) {
      throw ConfigError("train: label " + std::to_string(y) + " out of range for " +
                        std::to_string(model.num_classes) + " classes");
    }
  }

  Optim optim(model.params, cfg);
  BatchSampler sampler(data.size(), derive_seed(cfg.seed, "batches"));
  const std::size_t batch = std::min(cfg.batch_size, data.size());

  TrainHistory history;
  double window = 0.0;
  std::size_t window_n = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const LabeledImages mb = data.subset(sampler.next(batch));
    model.params.zero_grad();
    Tape tape;
    Var loss = cross_entropy(model.logits(tape, mb.images), mb.labels);
    const double l = loss.value()[0];
    if (!std::isfinite(l)) {
      throw NumericError("training diverged at step " + std::to_string(step) +
                         ": loss is " + std::to_string(l));
    }
    tape.backward(loss);
    optim.step(step);
    window += l;
    ++window_n;
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      HistoryRow row{step, window / static_cast<double>(window_n), std::nullopt,
                     parameters_sha256(model.params, false)};
      if (eval != nullptr && eval->size() > 0) row.eval_accuracy = evaluate(model, *eval, "eval").accuracy;
      history.rows.push_back(row);
      window = 0.0;
      window_n = 0;
    }
  }
  model.params.zero_grad();
  return history;
}

}  // namespace vpl
