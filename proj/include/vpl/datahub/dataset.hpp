#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vpl/backbone/backbone.hpp"
#include "vpl/datahub/manifest.hpp"
#include "vpl/datahub/synthetic.hpp"
#include "vpl/numcore/tensor.hpp"

namespace vpl {

/// Images stacked as N x C x H x W with parallel label/patient arrays.
struct LabeledImages {
  Tensor images;
  std::vector<std::size_t> labels;
  std::vector<std::string> patients;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return images.rank() == 4 ? images.dim(1) * images.dim(2) * images.dim(3) : 0; }
  /// Rows `indices` as a new set.
  LabeledImages subset(const std::vector<std::size_t>& indices) const;
};

/// Reads PGM/PPM (P2, P3, P5, P6) into channels x height x width scaled to
/// [0, 1].
Tensor read_pnm(const std::filesystem::path& path);
/// Headerless little-endian f32 with the given shape.
Tensor read_raw_f32(const std::filesystem::path& path, const Shape& shape);
/// Mirrors the last axis.
Tensor hflip(const Tensor& image);

/// Resolves sample refs: "synth:<tag>:<index>" through the registered
/// synthetic domains; *.pgm / *.ppm / *.raw files relative to `root`.
class SampleSource {
 public:
  SampleSource(std::size_t channels, std::size_t image_size, std::filesystem::path root = {})
      : channels_(channels), image_size_(image_size), root_(std::move(root)) {}

  void add_domain(const SyntheticDomainSpec& spec);
  bool has_domain(const std::string& tag) const { return domains_.contains(tag); }

  Tensor load(const std::string& ref) const;

 private:
  std::size_t channels_;
  std::size_t image_size_;
  std::filesystem::path root_;
  std::map<std::string, SyntheticDomain> domains_;
};

/// Loads the listed manifest entries into memory. `flip` mirrors every
/// image horizontally.
LabeledImages materialize(const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                          const SampleSource& source, bool flip = false);
LabeledImages materialize_all(const DatasetManifest& manifest, const SampleSource& source);

/// Manifest plus the generator that resolves its refs.
std::pair<DatasetManifest, SyntheticDomain> synth_dataset(const SyntheticDomainSpec& spec);

/// All `spec.num_samples` images of a synthetic domain, in index order.
LabeledImages synth_images(const SyntheticDomainSpec& spec);

}  // namespace vpl
