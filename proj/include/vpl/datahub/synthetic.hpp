#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "vpl/datahub/manifest.hpp"
#include "vpl/numcore/tensor.hpp"

namespace vpl {

/// Which pixels carry the class signal.
enum class Subspace { kFirstHalf, kSecondHalf, kFull };

/// Gaussian image domain: image = class_mean(label) + patient_shift(patient)
/// + noise. Class means are orthonormal directions inside the domain's pixel
/// subspace scaled so that any two class means are `class_mean_scale` apart.
struct SyntheticDomainSpec {
  std::string domain_tag = "general";
  std::size_t num_classes = 2;
  std::size_t image_size = 8;
  std::size_t channels = 1;
  double class_mean_scale = 4.0;
  double noise_std = 1.0;
  std::size_t patient_count = 16;
  double per_patient_shift_std = 0.0;
  std::uint64_t seed = 0;
  std::size_t num_samples = 512;
  Subspace subspace = Subspace::kFull;
  Modality modality = Modality::kColor;

  void validate() const;
  std::size_t pixels() const { return channels * image_size * image_size; }
};

void to_json(nlohmann::json& j, const SyntheticDomainSpec& s);
/// Unknown keys raise ConfigError. A missing "subspace" follows the tag:
/// "general" -> first_half, "medical" -> second_half, otherwise full.
void from_json(const nlohmann::json& j, SyntheticDomainSpec& s);

class SyntheticDomain {
 public:
  explicit SyntheticDomain(SyntheticDomainSpec spec);

  const SyntheticDomainSpec& spec() const { return spec_; }

  /// Label and patient of sample `index`; pure functions of (seed, index).
  std::size_t label(std::size_t index) const;
  std::string patient(std::size_t index) const;
  /// channels x image_size x image_size image of sample `index`.
  Tensor sample(std::size_t index) const;

  /// Entries reference samples as "synth:<domain_tag>:<index>".
  DatasetManifest manifest() const;

  const Tensor& class_means() const { return means_; }

 private:
  SyntheticDomainSpec spec_;
  Tensor means_;  // num_classes x pixels
};

std::string synth_ref(const std::string& domain_tag, std::size_t index);

struct SynthRef {
  std::string domain_tag;
  std::size_t index = 0;
};
/// Parses "synth:<tag>:<index>"; nullopt-like false when `ref` is not synthetic.
bool parse_synth_ref(const std::string& ref, SynthRef& out);

}  // namespace vpl
