#include "vpl/datahub/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "vpl/numcore/error.hpp"
#include "vpl/numcore/rng.hpp"

namespace vpl {

void to_json(nlohmann::json& j, const SplitSpec& s) {
  j = nlohmann::json{{"seen_patients", s.seen_patients},
                     {"unseen_patients", s.unseen_patients},
                     {"seed", s.seed},
                     {"train_fraction_within_seen", s.train_fraction_within_seen}};
}

void from_json(const nlohmann::json& j, SplitSpec& s) {
  if (!j.is_object()) throw ConfigError("split spec must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "seen_patients" && key != "unseen_patients" && key != "seed" &&
        key != "train_fraction_within_seen") {
      throw ConfigError("split spec: unknown key \"" + key + "\"");
    }
  }
  SplitSpec d;
  try {
    s.seen_patients = j.value("seen_patients", d.seen_patients);
    s.unseen_patients = j.value("unseen_patients", d.unseen_patients);
    s.seed = j.value("seed", d.seed);
    s.train_fraction_within_seen =
        j.value("train_fraction_within_seen", d.train_fraction_within_seen);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("split spec: ") + e.what());
  }
}

const std::vector<std::size_t>& PatientSplit::part(const std::string& name) const {
  if (name == "train") return train;
  if (name == "test_seen") return test_seen;
  if (name == "test_unseen") return test_unseen;
  throw ConfigError("unknown split \"" + name + "\" (expected train, test_seen, test_unseen)");
}

PatientSplit patient_split(const DatasetManifest& manifest, const SplitSpec& spec) {
  const auto patients = manifest.patients();
  if (spec.seen_patients == 0) throw ConfigError("split: at least one seen patient is required");
  if (spec.seen_patients + spec.unseen_patients > patients.size()) {
    throw ConfigError("split: requested " + std::to_string(spec.seen_patients) + " seen + " +
                      std::to_string(spec.unseen_patients) + " unseen patients but only " +
                      std::to_string(patients.size()) + " are available");
  }
  if (!(spec.train_fraction_within_seen > 0.0 && spec.train_fraction_within_seen <= 1.0)) {
    throw ConfigError("split: train_fraction_within_seen must lie in (0, 1]");
  }
  for (const auto& p : patients) {
    if (p.empty()) throw ConfigError("split: manifest has entries without patient_id");
  }

  PatientSplit out;
  out.spec = spec;
  std::vector<std::string> order = patients;
  Rng rng(derive_seed(spec.seed, "patients"));
  std::shuffle(order.begin(), order.end(), rng);
  out.seen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.seen_patients));
  out.unseen.assign(order.begin() + static_cast<std::ptrdiff_t>(spec.seen_patients),
                    order.begin() +
                        static_cast<std::ptrdiff_t>(spec.seen_patients + spec.unseen_patients));

  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    by_patient[manifest.entries[i].patient_id].push_back(i);
  }
  for (const auto& p : out.seen) {
    std::vector<std::size_t> idx = by_patient[p];
    Rng prng(derive_seed(spec.seed, "seen:" + p));
    std::shuffle(idx.begin(), idx.end(), prng);
    const auto k = static_cast<std::size_t>(
        std::llround(spec.train_fraction_within_seen * static_cast<double>(idx.size())));
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    out.test_seen.insert(out.test_seen.end(), idx.begin() + static_cast<std::ptrdiff_t>(k),
                         idx.end());
  }
  for (const auto& p : out.unseen) {
    const auto& idx = by_patient[p];
    out.test_unseen.insert(out.test_unseen.end(), idx.begin(), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test_seen.begin(), out.test_seen.end());
  std::sort(out.test_unseen.begin(), out.test_unseen.end());
  return out;
}

nlohmann::json split_to_json(const DatasetManifest& manifest, const PatientSplit& split) {
  auto refs = [&](const std::vector<std::size_t>& idx) {
    nlohmann::json a = nlohmann::json::array();
    for (auto i : idx) a.push_back(manifest.entries[i].sample_ref);
    return a;
  };
  return {{"train", refs(split.train)},
          {"test_seen", refs(split.test_seen)},
          {"test_unseen", refs(split.test_unseen)},
          {"seed", split.spec.seed},
          {"spec", split.spec}};
}

LeakageAudit audit_split(const DatasetManifest& manifest, const PatientSplit& split) {
  auto patients_of = [&](const std::vector<std::size_t>& idx) {
    std::set<std::string> s;
    for (auto i : idx) s.insert(manifest.entries[i].patient_id);
    return s;
  };
  const auto train = patients_of(split.train);
  const auto seen_test = patients_of(split.test_seen);
  const auto unseen = patients_of(split.test_unseen);
  const auto all = manifest.patients();
  const std::set<std::string> known(all.begin(), all.end());

  LeakageAudit audit;
  for (const auto& p : train) {
    if (unseen.contains(p)) audit.disjoint = false;
  }
  std::set<std::string> covered = train;
  covered.insert(seen_test.begin(), seen_test.end());
  audit.covers_seen = covered == std::set<std::string>(split.seen.begin(), split.seen.end());
  for (const auto* s : {&train, &seen_test, &unseen}) {
    for (const auto& p : *s) {
      if (!known.contains(p)) audit.within_manifest = false;
    }
  }
  return audit;
}

std::vector<SplitSpec> ood_sweep_specs(int mode, std::uint64_t seed, double train_fraction) {
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  switch (mode) {
    case 1: cells = {{160, 0}, {100, 60}, {80, 80}, {60, 100}}; break;
    case 2: cells = {{80, 80}, {80, 60}, {80, 40}, {80, 20}}; break;
    case 3: cells = {{140, 20}, {120, 20}, {100, 20}, {80, 20}, {60, 20}}; break;
    default: throw ConfigError("ood mode must be 1, 2 or 3, got " + std::to_string(mode));
  }
  std::vector<SplitSpec> out;
  for (auto [seen, unseen] : cells) out.push_back({seen, unseen, seed, train_fraction});
  return out;
}

}  // namespace vpl
