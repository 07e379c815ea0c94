#include "vpl/datahub/manifest.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

#include "vpl/numcore/error.hpp"

namespace vpl {

namespace {

constexpr std::array<std::string_view, 5> kModalities = {"color", "xray", "oct", "ct", "mri"};
constexpr std::array<std::string_view, 4> kColumns = {"sample_ref", "label", "patient_id",
                                                      "modality"};

std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::string_view modality_name(Modality m) { return kModalities[static_cast<std::size_t>(m)]; }

Modality parse_modality(std::string_view s) {
  for (std::size_t i = 0; i < kModalities.size(); ++i) {
    if (kModalities[i] == s) return static_cast<Modality>(i);
  }
  throw ParseError("unknown modality \"" + std::string(s) + "\" (expected color, xray, oct, ct, mri)");
}

std::vector<std::string> DatasetManifest::patients() const {
  std::set<std::string> ids;
  for (const auto& e : entries) ids.insert(e.patient_id);
  return {ids.begin(), ids.end()};
}

void DatasetManifest::validate(bool require_patients) const {
  std::set<std::string> refs;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::string row = "manifest " + name + " row " + std::to_string(i + 1);
    if (e.sample_ref.empty()) throw ParseError(row + ": empty sample_ref");
    if (e.label >= num_classes) {
      throw ParseError(row + ": label " + std::to_string(e.label) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
    if (require_patients && e.patient_id.empty()) throw ParseError(row + ": empty patient_id");
    if (!refs.insert(e.sample_ref).second) {
      throw ParseError(row + ": duplicate sample_ref \"" + e.sample_ref + "\"");
    }
  }
}

DatasetManifest parse_manifest(std::istream& in, std::string name,
                               std::optional<std::size_t> num_classes) {
  DatasetManifest m;
  m.name = std::move(name);
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw ParseError("manifest " + m.name + ": empty file (expected header " +
                     "sample_ref,label,patient_id,modality)");
  }
  const auto header = split_csv(trim(line));
  std::array<std::size_t, 4> col{};
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    auto it = std::find(header.begin(), header.end(), kColumns[c]);
    if (it == header.end()) {
      throw ParseError("manifest " + m.name + ": header is missing column \"" +
                       std::string(kColumns[c]) + "\"");
    }
    col[c] = static_cast<std::size_t>(it - header.begin());
  }
  std::size_t row = 0, max_label = 0;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    ++row;
    const std::string where = "manifest " + m.name + " row " + std::to_string(row);
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " columns, got " +
                       std::to_string(cells.size()));
    }
    ManifestEntry e;
    e.sample_ref = cells[col[0]];
    const std::string& label = cells[col[1]];
    if (label.empty() || !std::all_of(label.begin(), label.end(), ::isdigit)) {
      throw ParseError(where + ": label \"" + label + "\" is not a non-negative integer");
    }
    e.label = std::stoul(label);
    e.patient_id = cells[col[2]];
    try {
      e.modality = parse_modality(cells[col[3]]);
    } catch (const ParseError& err) {
      throw ParseError(where + ": " + err.what());
    }
    max_label = std::max(max_label, e.label);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw ParseError("manifest " + m.name + ": no data rows");
  m.num_classes = num_classes.value_or(max_label + 1);
  m.validate();
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path,
                              std::optional<std::size_t> num_classes) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  return parse_manifest(in, path.stem().string(), num_classes);
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "sample_ref,label,patient_id,modality\n";
  for (const auto& e : manifest.entries) {
    out << e.sample_ref << ',' << e.label << ',' << e.patient_id << ','
        << modality_name(e.modality) << '\n';
  }
}

}  // namespace vpl
