#include "vpl/cli/app.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "vpl/adaptation/adapted_model.hpp"
#include "vpl/cli/budget.hpp"
#include "vpl/cli/config.hpp"
#include "vpl/gmoe/gmoe.hpp"
#include "vpl/numcore/checkpoint.hpp"
#include "vpl/numcore/error.hpp"
#include "vpl/numcore/grad_check.hpp"
#include "vpl/numcore/ops.hpp"
#include "vpl/numcore/rng.hpp"
#include "vpl/trainlab/accounting.hpp"
#include "vpl/trainlab/metrics.hpp"
#include "vpl/trainlab/pretrain.hpp"
#include "vpl/trainlab/results.hpp"

namespace vpl::cli {

std::string seed_path(const std::string& path, std::size_t index, std::size_t count) {
  if (count <= 1) return path;
  const std::filesystem::path p(path);
  return (p.parent_path() / (p.stem().string() + ".s" + std::to_string(index) + p.extension().string()))
      .string();
}

std::size_t thread_cap() {
  if (const char* env = std::getenv("VPL_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) {
      throw ConfigError("VPL_THREADS must be a positive integer, got \"" + std::string(env) + "\"");
    }
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// ---------------------------------------------------------------- helpers

// Runs fn(0..n-1) on up to thread_cap() workers; results keep index order and
// the first failing index's exception is rethrown.
template <class T, class Fn>
std::vector<T> parallel_map(std::size_t n, Fn fn) {
  std::vector<std::optional<T>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  const std::size_t workers = std::min(n, thread_cap());
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) slots[i].emplace(fn(i));
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        omp_set_num_threads(1);  // cells are the unit of parallelism here
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            slots[i].emplace(fn(i));
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::uint64_t run_seed(std::uint64_t root, std::size_t index) {
  return derive_seed(root, "run:" + std::to_string(index));
}

struct SplitData {
  PatientSplit split;
  LeakageAudit audit;
  LabeledImages train;
  LabeledImages test_seen;
  LabeledImages test_unseen;

  const LabeledImages& part(const std::string& name) const {
    if (name == "train") return train;
    if (name == "test_seen") return test_seen;
    if (name == "test_unseen") return test_unseen;
    throw ConfigError("unknown split \"" + name + "\" (expected train, test_seen, test_unseen)");
  }
};

SplitData prepare_split(const LoadedData& data, const SplitSpec& spec, bool flip) {
  SplitData s;
  s.split = patient_split(data.manifest, spec);
  s.audit = audit_split(data.manifest, s.split);
  if (!s.audit.passed()) throw Error("split failed the leakage audit");
  s.train = materialize(data.manifest, s.split.train, data.source, flip);
  s.test_seen = materialize(data.manifest, s.split.test_seen, data.source, flip);
  s.test_unseen = materialize(data.manifest, s.split.test_unseen, data.source, flip);
  for (LabeledImages* part : {&s.train, &s.test_seen, &s.test_unseen}) {
    part->num_classes = data.manifest.num_classes;
  }
  return s;
}

struct Cell {
  AdaptationPlan plan;
  std::vector<const Backbone*> backbones;
  const LabeledImages* train = nullptr;
  std::vector<std::pair<std::string, const LabeledImages*>> evals;
  std::size_t num_classes = 0;
  std::uint64_t seed = 0;
  TrainConfig train_cfg;
};

struct CellOut {
  AdaptedModel model;
  TrainHistory history;
  std::vector<EvalResult> evals;
};

CellOut run_cell(const Cell& cell) {
  CellOut out;
  out.model = build_plan(cell.plan, cell.backbones, cell.num_classes, derive_seed(cell.seed, "plan"));
  TrainConfig tc = cell.train_cfg;
  tc.seed = derive_seed(cell.seed, "train");
  out.history = train(out.model, *cell.train, tc);
  for (const auto& [name, data] : cell.evals) {
    if (data->size() > 0) out.evals.push_back(evaluate(out.model, *data, name));
  }
  return out;
}

ExperimentConfig config_or_default(const std::string& path) {
  return path.empty() ? ExperimentConfig{} : load_experiment(path);
}

std::filesystem::path config_dir(const std::string& path) {
  return path.empty() ? std::filesystem::path() : std::filesystem::path(path).parent_path();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, text);
}

std::string results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream s;
  write_results_csv(s, rows);
  return s.str();
}

std::string results_md(const std::vector<ResultRow>& rows) {
  std::ostringstream s;
  write_results_markdown(s, rows);
  return s.str();
}

std::string pct(double x) { return strfmt("%.2f", 100.0 * x); }

Backbone backbone_or_init(const std::string& path, const ExperimentConfig& c) {
  if (!path.empty()) return load_backbone(path);
  return init_backbone(c.backbone, derive_seed(c.seed, "backbone"), "general");
}

// Plan for `method`: the config's plan when it names the same method,
// otherwise the method's defaults.
AdaptationPlan plan_for(const std::optional<std::string>& method, const ExperimentConfig& c) {
  if (!method) {
    if (!c.plan) throw ConfigError("no --method given and the config has no \"plan\"");
    return *c.plan;
  }
  const Method m = parse_method(*method);
  if (c.plan && c.plan->method == m) return *c.plan;
  return make_plan(m);
}

// ---------------------------------------------------------------- commands

struct PretrainArgs {
  std::string domain, config, out;
  std::optional<std::uint64_t> seed;
};

int cmd_pretrain(const PretrainArgs& a, std::ostream& out) {
  ExperimentConfig c = config_or_default(a.config);
  if (a.seed) c.seed = *a.seed;
  const SyntheticDomainSpec spec = expert_domain(c, a.domain);
  TrainConfig tc = c.pretrain.value_or(c.train);
  tc.seed = derive_seed(c.seed, "pretrain:" + a.domain);
  PretrainResult r = pretrain_expert(spec, c.backbone, tc);
  save_backbone(a.out, r.backbone);
  write_history_csv(a.out + ".history.csv", r.history);
  out << "domain_tag=" << r.backbone.domain_tag << '\n'
      << "val_accuracy=" << strfmt("%.6f", r.val_accuracy) << '\n'
      << "sha256=" << file_sha256(a.out) << '\n';
  return kExitOk;
}

struct AdaptArgs {
  std::optional<std::string> method;
  std::string backbone, backbone2, config, out;
  std::size_t seeds = 1;
  std::optional<std::uint64_t> seed;
};

int cmd_adapt(const AdaptArgs& a, std::ostream& out) {
  ExperimentConfig c = config_or_default(a.config);
  if (a.seed) c.seed = *a.seed;
  const AdaptationPlan plan = plan_for(a.method, c);
  const std::string name(method_name(plan.method));
  if (uses_two_backbones(plan.method) && a.backbone2.empty()) {
    throw ConfigError("method " + name + " combines two experts and needs --backbone2");
  }
  if (!uses_two_backbones(plan.method) && !a.backbone2.empty()) {
    throw ConfigError("--backbone2 is only used by moe-adapter and gmoe-adapter");
  }
  if (a.seeds == 0) throw ConfigError("--seeds must be >= 1");

  std::vector<std::string> paths{a.backbone};
  if (!a.backbone2.empty()) paths.push_back(a.backbone2);
  std::vector<Backbone> experts;
  for (const auto& p : paths) experts.push_back(load_backbone(p));
  if (experts.size() == 2 && experts[0].domain_tag == "medical" && experts[1].domain_tag == "general") {
    std::swap(experts[0], experts[1]);
    std::swap(paths[0], paths[1]);
  }
  std::vector<ExpertRef> refs;
  std::vector<const Backbone*> ptrs;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    refs.push_back({paths[i], file_sha256(paths[i]), experts[i].domain_tag});
    ptrs.push_back(&experts[i]);
  }

  const LoadedData data = load_data(c.data, experts[0].config, config_dir(a.config));
  const SplitData sd = prepare_split(data, effective_split(c, data.manifest), c.data.flip);
  if (sd.train.size() == 0) throw ConfigError("the split leaves no training samples");
  const double mult = total_params_multiplier(plan, experts[0].config, data.manifest.num_classes, c.tasks);

  auto cells = parallel_map<CellOut>(a.seeds, [&](std::size_t i) {
    Cell cell{plan, ptrs, &sd.train, {{"test_seen", &sd.test_seen}, {"test_unseen", &sd.test_unseen}},
              data.manifest.num_classes, run_seed(c.seed, i), c.train};
    return run_cell(cell);
  });

  std::vector<ResultRow> rows;
  std::ostringstream gates;
  gates << "seed,gate,mean,min,max\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string path = seed_path(a.out, i, a.seeds);
    save_adapted(path, cells[i].model, refs);
    write_history_csv(path + ".history.csv", cells[i].history);
    for (const auto& e : cells[i].evals) {
      rows.push_back({name, mult, data.manifest.name, e.split_name, e.accuracy, e.auroc, i});
    }
    if (plan.method == Method::kGmoeAdapter) {
      GateSet gs;
      gs.param = plan.hyper.gate_param;
      for (auto& p : cells[i].model.params) {
        if (p.id.starts_with("gate.")) gs.raw.push_back(&p);
      }
      for (const auto& g : gate_summary(gs)) {
        gates << i << ',' << g.id << ',' << strfmt("%.6f,%.6f,%.6f", g.mean, g.min, g.max) << '\n';
      }
    }
  }
  write_text(a.out + ".results.csv", results_csv(rows));
  write_text(a.out + ".results.md", results_md(rows));
  write_text(a.out + ".split.json", split_to_json(data.manifest, sd.split).dump(2) + "\n");
  out << results_md(rows);
  if (plan.method == Method::kGmoeAdapter) {
    write_text(a.out + ".gates.csv", gates.str());
    out << "\ngate summary\n" << gates.str();
  }
  return kExitOk;
}

struct EvalArgs {
  std::string model, config, data, split = "test_seen";
  std::size_t seeds = 1;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  ExperimentConfig c = config_or_default(a.config);
  if (!a.data.empty()) {
    c.data.synthetic.reset();
    c.data.manifest = std::filesystem::absolute(a.data).string();
  }
  if (a.seeds == 0) throw ConfigError("--seeds must be >= 1");
  std::vector<ResultRow> rows;
  double acc_sum = 0.0, auc_sum = 0.0;
  std::size_t auc_n = 0;
  for (std::size_t i = 0; i < a.seeds; ++i) {
    AdaptedModel model = load_adapted(seed_path(a.model, i, a.seeds));
    const LoadedData data = load_data(c.data, model.config, config_dir(a.config));
    const SplitData sd = prepare_split(data, effective_split(c, data.manifest), c.data.flip);
    const EvalResult r = evaluate(model, sd.part(a.split), a.split);
    const double mult = total_params_multiplier(model.plan, model.config, model.num_classes, c.tasks);
    rows.push_back({std::string(method_name(model.plan.method)), mult, data.manifest.name, a.split,
                    r.accuracy, r.auroc, i});
    acc_sum += r.accuracy;
    if (r.auroc) {
      auc_sum += *r.auroc;
      ++auc_n;
    }
  }
  write_results_csv(out, rows);
  if (a.seeds > 1) {
    out << "mean over " << a.seeds << " runs: accuracy=" << strfmt("%.6f", acc_sum / a.seeds);
    if (auc_n == a.seeds) out << " auroc=" << strfmt("%.6f", auc_sum / a.seeds);
    out << '\n';
  }
  return kExitOk;
}

struct ParamsArgs {
  std::string method, config, preset;
  std::size_t tasks = 0;
  std::optional<std::size_t> classes;
};

int cmd_params(const ParamsArgs& a, std::ostream& out) {
  ExperimentConfig c = config_or_default(a.config);
  const bool vit_b = a.preset == "vit-b";
  BackboneConfig bc = vit_b ? BackboneConfig::vit_b() : c.backbone;
  const std::size_t k = a.classes.value_or(vit_b ? 50 : bc.num_classes);
  auto plan_of = [&](Method m) {
    if (vit_b) return reference_plan(m);
    return plan_for(std::string(method_name(m)), c);
  };
  std::vector<Method> methods;
  if (a.method == "all") {
    methods.assign(kAllMethods.begin(), kAllMethods.end());
  } else {
    methods.push_back(parse_method(a.method));
  }
  std::vector<std::pair<Method, ParamAccount>> accts;
  for (Method m : methods) accts.emplace_back(m, account_params(plan_of(m), bc, k, a.tasks));

  if (methods.size() == 1) {
    const ParamAccount& p = accts[0].second;
    out << "method=" << method_name(methods[0]) << '\n'
        << "per_task_trainable=" << p.per_task << '\n'
        << "shared_backbone=" << p.shared << '\n'
        << "reference=" << p.reference << '\n'
        << "tasks=" << p.tasks << '\n'
        << "multiplier=" << strfmt("%.4fX", p.multiplier) << '\n';
    return kExitOk;
  }
  std::stable_sort(accts.begin(), accts.end(), [](const auto& x, const auto& y) {
    return x.second.multiplier < y.second.multiplier;
  });
  std::vector<std::vector<std::string>> table{{"rank", "method", "per_task_trainable", "multiplier"}};
  for (std::size_t i = 0; i < accts.size(); ++i) {
    table.push_back({std::to_string(i + 1), std::string(method_name(accts[i].first)),
                     std::to_string(accts[i].second.per_task),
                     strfmt("%.4fX", accts[i].second.multiplier)});
  }
  write_markdown_table(out, table);
  return kExitOk;
}

struct GradcheckArgs {
  std::string method, config, fusion, gate;
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  ExperimentConfig c = config_or_default(a.config);
  AdaptationPlan plan = plan_for(a.method, c);
  if (!a.fusion.empty() || !a.gate.empty()) {
    if (plan.method != Method::kGmoeAdapter) {
      throw ConfigError("--fusion and --gate apply to gmoe-adapter only");
    }
    nlohmann::json hyper = plan_to_json(plan).at("hyper");
    if (!a.fusion.empty()) hyper["fusion_mode"] = a.fusion;
    if (!a.gate.empty()) hyper["gate_param"] = a.gate;
    plan = make_plan(plan.method, hyper);
  }
  const BackboneConfig bc = c.backbone;
  const std::size_t k = std::max<std::size_t>(bc.num_classes, 2);
  std::vector<Backbone> experts{init_backbone(bc, derive_seed(a.seed, "general"), "general")};
  if (uses_two_backbones(plan.method)) {
    experts.push_back(init_backbone(bc, derive_seed(a.seed, "medical"), "medical"));
  }
  std::vector<const Backbone*> ptrs;
  for (const auto& b : experts) ptrs.push_back(&b);
  AdaptedModel model = build_plan(plan, ptrs, k, derive_seed(a.seed, "plan"));

  // Zero-initialized modules (adapter up projections, biases) would leave
  // parts of the graph without signal; perturb every trainable entry.
  Rng rng(derive_seed(a.seed, "jitter"));
  for (auto& p : model.params) {
    if (!p.trainable) continue;
    for (double& v : p.value.data()) v += truncated_normal(rng, 0.1);
  }
  Rng data_rng(derive_seed(a.seed, "data"));
  const std::size_t batch = 3;
  const Tensor images =
      uniform_tensor(data_rng, {batch, bc.in_channels, bc.image_size, bc.image_size}, -1.0, 1.0);
  std::vector<std::size_t> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = i % k;

  const GradCheckReport rep = grad_check(model.params, [&](Tape& t) {
    return cross_entropy(model.logits(t, images), labels);
  });
  std::vector<std::vector<std::string>> table{{"parameter", "entries", "max_rel_error", "status"}};
  for (const auto& e : rep.params) {
    table.push_back({e.id, std::to_string(e.entries), strfmt("%.3e", e.max_rel_error),
                     e.passed ? "ok" : "FAIL"});
  }
  write_markdown_table(out, table);
  if (!rep.passed()) {
    out << "gradcheck FAILED for " << method_name(plan.method) << ":";
    for (const auto& id : rep.failures()) out << ' ' << id;
    out << '\n';
    return kExitFailure;
  }
  out << "gradcheck passed for " << method_name(plan.method) << " ("
      << rep.params.size() << " trainable tensors, tol " << strfmt("%.0e", rep.tolerance) << ")\n";
  return kExitOk;
}

struct SweepArgs {
  std::vector<double> budgets;
  std::string config, backbone, out;
  std::size_t seeds = 3;
  std::optional<std::uint64_t> seed;
};

int cmd_sweep_scaling(const SweepArgs& a, std::ostream& out) {
  ExperimentConfig c = config_or_default(a.config);
  if (a.seed) c.seed = *a.seed;
  if (a.budgets.empty()) throw ConfigError("--budgets needs at least one value");
  if (a.seeds == 0) throw ConfigError("--seeds must be >= 1");
  const std::filesystem::path dir = a.out.empty() ? c.output_dir : a.out;
  const Backbone bb = backbone_or_init(a.backbone, c);
  const LoadedData data = load_data(c.data, bb.config, config_dir(a.config));
  const SplitData sd = prepare_split(data, effective_split(c, data.manifest), c.data.flip);
  const std::size_t k = data.manifest.num_classes;
  const bool use_unseen = sd.test_seen.size() == 0;
  const std::string eval_split = use_unseen ? "test_unseen" : "test_seen";
  const LabeledImages& eval_set = use_unseen ? sd.test_unseen : sd.test_seen;
  if (eval_set.size() == 0) throw ConfigError("the split leaves nothing to evaluate");

  std::vector<BudgetChoice> choices;
  for (double b : a.budgets) choices.push_back(choose_budget_plan(b, bb.config, k, c.tasks));

  const std::size_t n = choices.size() * a.seeds;
  const auto cells = parallel_map<CellOut>(n, [&](std::size_t i) {
    Cell cell{choices[i / a.seeds].plan, {&bb}, &sd.train, {{eval_split, &eval_set}}, k,
              run_seed(c.seed, i % a.seeds), c.train};
    return run_cell(cell);
  });

  std::vector<ResultRow> rows;
  std::vector<double> mean(choices.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const BudgetChoice& ch = choices[i / a.seeds];
    const EvalResult& e = cells[i].evals.at(0);
    rows.push_back({std::string(method_name(ch.plan.method)), ch.achieved, data.manifest.name,
                    e.split_name, e.accuracy, e.auroc, i % a.seeds});
    mean[i / a.seeds] += e.accuracy / static_cast<double>(a.seeds);
  }

  auto hyper_text = [](const AdaptationPlan& p) {
    switch (p.method) {
      case Method::kVptDeep: return "vpt-deep P=" + std::to_string(p.hyper.prompt_len);
      case Method::kAdapter: return "adapter r=" + std::to_string(p.hyper.bottleneck);
      default: return std::string(method_name(p.method));
    }
  };
  std::vector<std::vector<std::string>> table{
      {"budget", "achieved", "plan", data.manifest.name + " (mean acc %)"}};
  std::ostringstream csv;
  csv << "budget,achieved_multiplier,plan,dataset,mean_accuracy,seeds\n";
  for (std::size_t b = 0; b < choices.size(); ++b) {
    const auto& ch = choices[b];
    table.push_back({budget_label(ch.requested), strfmt("%.4fX", ch.achieved), hyper_text(ch.plan),
                     pct(mean[b])});
    csv << budget_label(ch.requested) << ',' << strfmt("%.6f", ch.achieved) << ','
        << hyper_text(ch.plan) << ',' << data.manifest.name << ',' << strfmt("%.6f", mean[b]) << ','
        << a.seeds << '\n';
  }
  std::ostringstream md;
  write_markdown_table(md, table);
  if (choices.size() > 1) {
    constexpr double kSlack = 0.01;
    bool ok = true;
    md << "\nmonotonicity (slack 1.0 point between adjacent budgets)\n";
    for (std::size_t b = 1; b < choices.size(); ++b) {
      const double delta = mean[b] - mean[b - 1];
      const bool step_ok = delta >= -kSlack;
      ok = ok && step_ok;
      md << budget_label(choices[b - 1].requested) << " -> " << budget_label(choices[b].requested)
         << ": " << strfmt("%+.2f", 100.0 * delta) << " points " << (step_ok ? "ok" : "DROP") << '\n';
    }
    md << "trend: " << (ok ? "nondecreasing" : "violated") << '\n';
  }
  write_text(dir / "scaling.csv", csv.str());
  write_text(dir / "scaling.md", md.str());
  write_text(dir / "results.csv", results_csv(rows));
  out << md.str();
  return kExitOk;
}

struct OodArgs {
  int mode = 0;
  std::string config, backbone, out;
  std::vector<double> budgets;
  std::size_t seeds = 1;
  bool splits_only = false;
  std::optional<std::uint64_t> seed;
};

int cmd_ood(const OodArgs& a, std::ostream& out) {
  ExperimentConfig c = config_or_default(a.config);
  if (a.seed) c.seed = *a.seed;
  if (a.seeds == 0) throw ConfigError("--seeds must be >= 1");
  const std::filesystem::path dir = a.out.empty() ? c.output_dir : a.out;
  const double frac = c.split ? c.split->train_fraction_within_seen : 0.8;
  const auto specs = ood_sweep_specs(a.mode, derive_seed(c.seed, "ood"), frac);

  const Backbone bb = backbone_or_init(a.backbone, c);
  const LoadedData data = load_data(c.data, bb.config, config_dir(a.config));
  auto label = [](const SplitSpec& s) {
    return std::to_string(s.seen_patients) + "/" + std::to_string(s.unseen_patients);
  };

  // Split generation and audit for every setting.
  std::vector<PatientSplit> splits;
  std::ostringstream audit;
  audit << "leakage audit (seen/unseen patients: train, test_seen, test_unseen samples)\n";
  bool all_pass = true;
  for (const auto& spec : specs) {
    splits.push_back(patient_split(data.manifest, spec));
    const LeakageAudit la = audit_split(data.manifest, splits.back());
    all_pass = all_pass && la.passed();
    audit << label(spec) << ": " << splits.back().train.size() << ", "
          << splits.back().test_seen.size() << ", " << splits.back().test_unseen.size() << "  "
          << (la.passed() ? "pass" : "FAIL") << " (disjoint=" << la.disjoint
          << " covers_seen=" << la.covers_seen << " within_manifest=" << la.within_manifest << ")\n";
  }
  audit << "all splits " << (all_pass ? "pass" : "FAIL") << '\n';
  std::vector<std::string> header{"budget"};
  for (const auto& spec : specs) header.push_back(label(spec));

  if (a.splits_only) {
    std::ostringstream md;
    write_markdown_table(md, {header});
    md << '\n' << audit.str();
    write_text(dir / ("ood_mode" + std::to_string(a.mode) + "_splits.md"), md.str());
    out << md.str();
    return all_pass ? kExitOk : kExitFailure;
  }
  if (!all_pass) throw Error("leakage audit failed");

  const std::size_t k = data.manifest.num_classes;
  std::vector<BudgetChoice> rows_plan;
  if (a.budgets.empty()) {
    AdaptationPlan p = c.plan.value_or(make_plan(Method::kLinear));
    if (uses_two_backbones(p.method)) throw ConfigError("ood runs single-backbone plans");
    const double m = total_params_multiplier(p, bb.config, k, c.tasks);
    rows_plan.push_back({m, m, p});
  } else {
    for (double b : a.budgets) rows_plan.push_back(choose_budget_plan(b, bb.config, k, c.tasks));
  }

  std::vector<SplitData> sds;
  for (const auto& spec : specs) sds.push_back(prepare_split(data, spec, c.data.flip));

  const std::size_t per_row = specs.size() * a.seeds;
  const std::size_t n = rows_plan.size() * per_row;
  const auto cells = parallel_map<CellOut>(n, [&](std::size_t i) {
    const SplitData& sd = sds[(i % per_row) / a.seeds];
    Cell cell{rows_plan[i / per_row].plan, {&bb}, &sd.train,
              {{"test_seen", &sd.test_seen}, {"test_unseen", &sd.test_unseen}}, k,
              run_seed(c.seed, i % a.seeds), c.train};
    return run_cell(cell);
  });

  std::vector<ResultRow> rows;
  std::vector<std::vector<std::string>> table{header};
  for (std::size_t r = 0; r < rows_plan.size(); ++r) {
    std::vector<std::string> line{budget_label(rows_plan[r].achieved)};
    for (std::size_t s = 0; s < specs.size(); ++s) {
      double seen = 0.0, unseen = 0.0;
      bool has_seen = false, has_unseen = false;
      for (std::size_t i = 0; i < a.seeds; ++i) {
        const CellOut& co = cells[r * per_row + s * a.seeds + i];
        for (const auto& e : co.evals) {
          rows.push_back({std::string(method_name(rows_plan[r].plan.method)), rows_plan[r].achieved,
                          data.manifest.name + "@" + label(specs[s]), e.split_name, e.accuracy,
                          e.auroc, i});
          if (e.split_name == "test_seen") {
            seen += e.accuracy / a.seeds;
            has_seen = true;
          } else {
            unseen += e.accuracy / a.seeds;
            has_unseen = true;
          }
        }
      }
      line.push_back((has_seen ? pct(seen) : std::string("-")) + " / " +
                     (has_unseen ? pct(unseen) : std::string("-")));
    }
    table.push_back(line);
  }
  std::ostringstream md;
  md << "accuracy % (test_seen / test_unseen), columns are seen/unseen patient counts\n";
  write_markdown_table(md, table);
  md << '\n' << audit.str();
  const std::string stem = "ood_mode" + std::to_string(a.mode);
  write_text(dir / (stem + ".md"), md.str());
  write_text(dir / (stem + ".results.csv"), results_csv(rows));
  out << md.str();
  return kExitOk;
}

struct SynthArgs {
  std::string config, out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const ExperimentConfig c = config_or_default(a.config);
  if (!c.data.synthetic) throw ConfigError("config has no data.synthetic spec");
  const DatasetManifest m = SyntheticDomain(*c.data.synthetic).manifest();
  write_manifest(a.out, m);
  out << "wrote " << m.entries.size() << " entries (" << m.patients().size() << " patients, "
      << m.num_classes << " classes) to " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale ViT adaptation lab", "vpl"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "Pretrain a domain-tagged expert backbone");
  p->add_option("--domain", pre.domain, "general or medical")->required();
  p->add_option("--config", pre.config, "Experiment config JSON");
  p->add_option("--out", pre.out, "Output checkpoint")->required();
  p->add_option("--seed", pre.seed, "Root seed (overrides the config)");

  AdaptArgs ad;
  auto* ac = app.add_subcommand("adapt", "Adapt backbone(s) to a task and train");
  ac->add_option("--method", ad.method, "One of: " + method_list());
  ac->add_option("--backbone", ad.backbone, "Backbone checkpoint (general expert)")->required();
  ac->add_option("--backbone2", ad.backbone2, "Second expert checkpoint (moe/gmoe)");
  ac->add_option("--config", ad.config, "Experiment config JSON");
  ac->add_option("--out", ad.out, "Output checkpoint")->required();
  ac->add_option("--seeds", ad.seeds, "Independent runs");
  ac->add_option("--seed", ad.seed, "Root seed (overrides the config)");

  EvalArgs ev;
  auto* ec = app.add_subcommand("eval", "Evaluate an adapted checkpoint");
  ec->add_option("--model", ev.model, "Adapted checkpoint")->required();
  ec->add_option("--config", ev.config, "Experiment config JSON (data and split)");
  ec->add_option("--data", ev.data, "Manifest CSV (overrides the config data)");
  ec->add_option("--split", ev.split, "train, test_seen or test_unseen")
      ->check(CLI::IsMember({"train", "test_seen", "test_unseen"}));
  ec->add_option("--seeds", ev.seeds, "Average over this many runs written by adapt --seeds");

  SweepArgs sw;
  auto* sc = app.add_subcommand("sweep-scaling", "Accuracy versus tunable-parameter budget");
  sc->add_option("--budgets", sw.budgets, "Comma-separated multipliers")->required()->delimiter(',');
  sc->add_option("--config", sw.config, "Experiment config JSON");
  sc->add_option("--backbone", sw.backbone, "Backbone checkpoint (default: seeded init)");
  sc->add_option("--seeds", sw.seeds, "Runs per budget");
  sc->add_option("--out", sw.out, "Output directory (default: config output_dir)");
  sc->add_option("--seed", sw.seed, "Root seed (overrides the config)");

  OodArgs od;
  auto* oc = app.add_subcommand("ood", "Patient-ID out-of-distribution protocol");
  oc->add_option("--mode", od.mode, "1, 2 or 3")->required()->check(CLI::Range(1, 3));
  oc->add_option("--config", od.config, "Experiment config JSON");
  oc->add_option("--backbone", od.backbone, "Backbone checkpoint (default: seeded init)");
  oc->add_option("--budgets", od.budgets, "Comma-separated multipliers (rows)")->delimiter(',');
  oc->add_option("--seeds", od.seeds, "Runs per cell");
  oc->add_option("--out", od.out, "Output directory (default: config output_dir)");
  oc->add_flag("--splits-only", od.splits_only, "Generate and audit the splits without training");
  oc->add_option("--seed", od.seed, "Root seed (overrides the config)");

  ParamsArgs pa;
  auto* pc = app.add_subcommand("params", "Total-Params accounting");
  pc->add_option("--method", pa.method, "Method name or \"all\"")->required();
  pc->add_option("--config", pa.config, "Experiment config JSON");
  pc->add_option("--preset", pa.preset, "vit-b: ViT-B/16 with reference hyperparameters")
      ->check(CLI::IsMember({"vit-b"}));
  pc->add_option("--tasks", pa.tasks, "Number of tasks T")->required()->check(CLI::Range(std::size_t{1}, std::size_t{1000000}));
  pc->add_option("--classes", pa.classes, "Classes per task head");

  GradcheckArgs gc;
  auto* gcc = app.add_subcommand("gradcheck", "Finite-difference check of a tiny adapted model");
  gcc->add_option("--method", gc.method, "One of: " + method_list())->required();
  gcc->add_option("--config", gc.config, "Experiment config JSON (backbone geometry)");
  gcc->add_option("--fusion", gc.fusion, "gmoe fusion mode")->check(CLI::IsMember({"final", "per_block"}));
  gcc->add_option("--gate", gc.gate, "gmoe gate parameterization")->check(CLI::IsMember({"raw", "sigmoid"}));
  gcc->add_option("--seed", gc.seed, "Seed");

  SynthArgs sy;
  auto* syc = app.add_subcommand("synth", "Write the manifest of the config's synthetic domain");
  syc->add_option("--config", sy.config, "Experiment config JSON")->required();
  syc->add_option("--out", sy.out, "Manifest CSV")->required();

  std::vector<const char*> argv{"vpl"};
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*p) return cmd_pretrain(pre, out);
    if (*ac) return cmd_adapt(ad, out);
    if (*ec) return cmd_eval(ev, out);
    if (*sc) return cmd_sweep_scaling(sw, out);
    if (*oc) return cmd_ood(od, out);
    if (*pc) return cmd_params(pa, out);
    if (*gcc) return cmd_gradcheck(gc, out);
    if (*syc) return cmd_synth(sy, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace vpl::cli
