#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vpl {

enum class Modality { kColor, kXray, kOct, kCt, kMri };

std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view s);

struct ManifestEntry {
  std::string sample_ref;
  std::size_t label = 0;
  std::string patient_id;
  Modality modality = Modality::kColor;
};

struct DatasetManifest {
  std::string name;
  std::size_t num_classes = 0;
  std::vector<ManifestEntry> entries;

  /// Distinct patient ids in sorted order.
  std::vector<std::string> patients() const;
  /// Label range, unique sample refs, and (optionally) non-empty patient ids.
  void validate(bool require_patients = false) const;
};

/// CSV with the header sample_ref,label,patient_id,modality (any column
/// order). When `num_classes` is absent it is inferred as max label + 1.
/// Errors name the offending data row (1-based, header excluded).
DatasetManifest parse_manifest(std::istream& in, std::string name,
                               std::optional<std::size_t> num_classes = std::nullopt);
DatasetManifest load_manifest(const std::filesystem::path& path,
                              std::optional<std::size_t> num_classes = std::nullopt);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

}  // namespace vpl
