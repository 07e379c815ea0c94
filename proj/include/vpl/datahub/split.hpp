#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpl/datahub/manifest.hpp"

namespace vpl {

struct SplitSpec {
  std::size_t seen_patients = 0;
  std::size_t unseen_patients = 0;
  std::uint64_t seed = 0;
  double train_fraction_within_seen = 0.8;

  bool operator==(const SplitSpec&) const = default;
};

void to_json(nlohmann::json& j, const SplitSpec& s);
void from_json(const nlohmann::json& j, SplitSpec& s);

/// Entry indices into the manifest.
struct PatientSplit {
  SplitSpec spec;
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test_seen;
  std::vector<std::size_t> test_unseen;

  const std::vector<std::size_t>& part(const std::string& name) const;
};

/// Seeded shuffle of the distinct patients: the first `seen_patients` are
/// seen, the next `unseen_patients` unseen. Each seen patient's samples are
/// shuffled and the leading round(train_fraction * n) go to train, the rest
/// to test_seen. Unseen patients' samples all go to test_unseen.
PatientSplit patient_split(const DatasetManifest& manifest, const SplitSpec& spec);

/// {train:[refs], test_seen:[...], test_unseen:[...], seed, spec}
nlohmann::json split_to_json(const DatasetManifest& manifest, const PatientSplit& split);

struct LeakageAudit {
  bool disjoint = true;         // patients(train) and patients(test_unseen)
  bool covers_seen = true;      // patients(train U test_seen) == seen set
  bool within_manifest = true;  // every split patient exists in the manifest
  bool passed() const { return disjoint && covers_seen && within_manifest; }
};

LeakageAudit audit_split(const DatasetManifest& manifest, const PatientSplit& split);

/// The three patient-ID settings: 1 = seen/unseen pairs (160,0), (100,60),
/// (80,80), (60,100); 2 = seen 80 with unseen 80, 60, 40, 20; 3 = unseen 20
/// with seen 140, 120, 100, 80, 60.
std::vector<SplitSpec> ood_sweep_specs(int mode, std::uint64_t seed = 0,
                                       double train_fraction = 0.8);

}  // namespace vpl
