#include "vpl/datahub/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "vpl/numcore/error.hpp"
#include "vpl/numcore/rng.hpp"

namespace vpl {

namespace {

std::string_view subspace_name(Subspace s) {
  switch (s) {
    case Subspace::kFirstHalf: return "first_half";
    case Subspace::kSecondHalf: return "second_half";
    case Subspace::kFull: return "full";
  }
  return "full";
}

Subspace default_subspace(const std::string& tag) {
  if (tag == "general") return Subspace::kFirstHalf;
  if (tag == "medical") return Subspace::kSecondHalf;
  return Subspace::kFull;
}

}  // namespace

void SyntheticDomainSpec::validate() const {
  if (num_classes < 1) throw ConfigError("synthetic domain: num_classes must be >= 1");
  if (image_size < 1 || channels < 1) throw ConfigError("synthetic domain: empty image");
  if (!(noise_std >= 0.0)) throw ConfigError("synthetic domain: noise_std must be >= 0");
  if (!(per_patient_shift_std >= 0.0)) {
    throw ConfigError("synthetic domain: per_patient_shift_std must be >= 0");
  }
  if (patient_count < 1) throw ConfigError("synthetic domain: patient_count must be >= 1");
  if (domain_tag.empty() || domain_tag.find(':') != std::string::npos) {
    throw ConfigError("synthetic domain: domain_tag must be non-empty and contain no ':'");
  }
  const std::size_t dims = subspace == Subspace::kFull ? pixels() : pixels() / 2;
  if (num_classes > dims) {
    throw ConfigError("synthetic domain: " + std::to_string(num_classes) +
                      " classes do not fit a " + std::to_string(dims) + "-dimensional subspace");
  }
}

void to_json(nlohmann::json& j, const SyntheticDomainSpec& s) {
  j = nlohmann::json{{"domain_tag", s.domain_tag},
                     {"num_classes", s.num_classes},
                     {"image_size", s.image_size},
                     {"channels", s.channels},
                     {"class_mean_scale", s.class_mean_scale},
                     {"noise_std", s.noise_std},
                     {"patient_count", s.patient_count},
                     {"per_patient_shift_std", s.per_patient_shift_std},
                     {"seed", s.seed},
                     {"num_samples", s.num_samples},
                     {"subspace", subspace_name(s.subspace)},
                     {"modality", modality_name(s.modality)}};
}

void from_json(const nlohmann::json& j, SyntheticDomainSpec& s) {
  static const std::vector<std::string> kKeys = {
      "domain_tag", "num_classes",           "image_size", "channels",    "class_mean_scale",
      "noise_std",  "patient_count",         "seed",       "num_samples", "subspace",
      "modality",   "per_patient_shift_std"};
  if (!j.is_object()) throw ConfigError("synthetic domain spec must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(kKeys.begin(), kKeys.end(), key) == kKeys.end()) {
      throw ConfigError("synthetic domain spec: unknown key \"" + key + "\"");
    }
  }
  SyntheticDomainSpec d;
  try {
    s.domain_tag = j.value("domain_tag", d.domain_tag);
    s.num_classes = j.value("num_classes", d.num_classes);
    s.image_size = j.value("image_size", d.image_size);
    s.channels = j.value("channels", d.channels);
    s.class_mean_scale = j.value("class_mean_scale", d.class_mean_scale);
    s.noise_std = j.value("noise_std", d.noise_std);
    s.patient_count = j.value("patient_count", d.patient_count);
    s.per_patient_shift_std = j.value("per_patient_shift_std", d.per_patient_shift_std);
    s.seed = j.value("seed", d.seed);
    s.num_samples = j.value("num_samples", d.num_samples);
    s.modality = parse_modality(j.value("modality", std::string("color")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic domain spec: ") + e.what());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("synthetic domain spec: ") + e.what());
  }
  s.subspace = default_subspace(s.domain_tag);
  if (j.contains("subspace")) {
    const auto v = j["subspace"].get<std::string>();
    if (v == "first_half") {
      s.subspace = Subspace::kFirstHalf;
    } else if (v == "second_half") {
      s.subspace = Subspace::kSecondHalf;
    } else if (v == "full") {
      s.subspace = Subspace::kFull;
    } else {
      throw ConfigError("synthetic domain spec: subspace must be first_half, second_half or full");
    }
  }
  s.validate();
}

std::string synth_ref(const std::string& domain_tag, std::size_t index) {
  return "synth:" + domain_tag + ":" + std::to_string(index);
}

bool parse_synth_ref(const std::string& ref, SynthRef& out) {
  if (!ref.starts_with("synth:")) return false;
  const auto colon = ref.rfind(':');
  if (colon <= 5) return false;
  const std::string idx = ref.substr(colon + 1);
  if (idx.empty() || !std::all_of(idx.begin(), idx.end(), ::isdigit)) return false;
  out.domain_tag = ref.substr(6, colon - 6);
  out.index = std::stoul(idx);
  return !out.domain_tag.empty();
}

SyntheticDomain::SyntheticDomain(SyntheticDomainSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const std::size_t n = spec_.pixels();
  std::size_t lo = 0, hi = n;
  if (spec_.subspace == Subspace::kFirstHalf) hi = n / 2;
  if (spec_.subspace == Subspace::kSecondHalf) lo = n / 2;

  // Orthonormal class directions by Gram-Schmidt on Gaussian draws.
  Rng rng(derive_seed(spec_.seed, "class_means"));
  std::normal_distribution<double> normal(0.0, 1.0);
  means_ = Tensor({spec_.num_classes, n});
  for (std::size_t c = 0; c < spec_.num_classes; ++c) {
    for (;;) {
      std::vector<double> v(n, 0.0);
      for (std::size_t p = lo; p < hi; ++p) v[p] = normal(rng);
      for (std::size_t k = 0; k < c; ++k) {
        double dot = 0.0;
        for (std::size_t p = 0; p < n; ++p) dot += v[p] * means_.at(k, p);
        for (std::size_t p = 0; p < n; ++p) v[p] -= dot * means_.at(k, p);
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm < 1e-8) continue;
      for (std::size_t p = 0; p < n; ++p) means_.at(c, p) = v[p] / norm;
      break;
    }
  }
  const double s = spec_.class_mean_scale / std::sqrt(2.0);
  for (auto& v : means_.data()) v *= s;
}

std::size_t SyntheticDomain::label(std::size_t index) const {
  Rng rng(derive_seed(spec_.seed, index));
  return std::uniform_int_distribution<std::size_t>(0, spec_.num_classes - 1)(rng);
}

std::string SyntheticDomain::patient(std::size_t index) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "P%04zu", index % spec_.patient_count);
  return buf;
}

Tensor SyntheticDomain::sample(std::size_t index) const {
  const std::size_t n = spec_.pixels();
  Rng rng(derive_seed(spec_.seed, index));
  const std::size_t y = std::uniform_int_distribution<std::size_t>(0, spec_.num_classes - 1)(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor img({spec_.channels, spec_.image_size, spec_.image_size});
  for (std::size_t p = 0; p < n; ++p) img[p] = means_.at(y, p);
  if (spec_.per_patient_shift_std > 0.0) {
    Rng prng(derive_seed(spec_.seed, "patient:" + patient(index)));
    for (std::size_t p = 0; p < n; ++p) img[p] += spec_.per_patient_shift_std * normal(prng);
  }
  if (spec_.noise_std > 0.0) {
    for (std::size_t p = 0; p < n; ++p) img[p] += spec_.noise_std * normal(rng);
  }
  return img;
}

DatasetManifest SyntheticDomain::manifest() const {
  DatasetManifest m;
  m.name = spec_.domain_tag;
  m.num_classes = spec_.num_classes;
  m.entries.reserve(spec_.num_samples);
  for (std::size_t i = 0; i < spec_.num_samples; ++i) {
    m.entries.push_back({synth_ref(spec_.domain_tag, i), label(i), patient(i), spec_.modality});
  }
  return m;
}

}  // namespace vpl
