#include "vpl/datahub/dataset.hpp"

#include <cstring>
#include <fstream>

#include "vpl/numcore/checkpoint.hpp"
#include "vpl/numcore/error.hpp"

namespace vpl {

LabeledImages LabeledImages::subset(const std::vector<std::size_t>& indices) const {
  LabeledImages out;
  out.num_classes = num_classes;
  Shape shape = images.shape();
  shape[0] = indices.size();
  out.images = Tensor(shape);
  const std::size_t stride = image_size();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    std::copy_n(images.raw() + i * stride, stride, out.images.raw() + k * stride);
    out.labels.push_back(labels[i]);
    out.patients.push_back(patients[i]);
  }
  return out;
}

namespace {

// Reads the next whitespace-separated header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  for (;;) {
    int c = in.peek();
    if (c == EOF) break;
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(in.get()));
  }
  return tok;
}

}  // namespace

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open image " + path.string());
  const std::string magic = pnm_token(in);
  const bool ascii = magic == "P2" || magic == "P3";
  const bool color = magic == "P3" || magic == "P6";
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw ParseError(path.string() + ": not a PGM/PPM file");
  }
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(pnm_token(in));
    h = std::stoul(pnm_token(in));
    maxval = std::stoul(pnm_token(in));
  } catch (const std::exception&) {
    throw ParseError(path.string() + ": malformed PNM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw ParseError(path.string() + ": malformed PNM header");
  }
  const std::size_t channels = color ? 3 : 1;
  Tensor out({channels, h, w});
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        std::size_t v = 0;
        if (ascii) {
          const std::string tok = pnm_token(in);
          if (tok.empty()) throw ParseError(path.string() + ": truncated pixel data");
          v = std::stoul(tok);
        } else if (maxval < 256) {
          const int b = in.get();
          if (b == EOF) throw ParseError(path.string() + ": truncated pixel data");
          v = static_cast<std::size_t>(b);
        } else {
          const int hi = in.get(), lo = in.get();
          if (lo == EOF) throw ParseError(path.string() + ": truncated pixel data");
          v = static_cast<std::size_t>(hi) << 8 | static_cast<std::size_t>(lo);
        }
        out[(c * h + y) * w + x] = static_cast<double>(v) * scale;
      }
    }
  }
  return out;
}

Tensor read_raw_f32(const std::filesystem::path& path, const Shape& shape) {
  const std::string bytes = read_file_bytes(path);
  const std::size_t n = shape_size(shape);
  if (bytes.size() != n * sizeof(float)) {
    throw ParseError(path.string() + ": expected " + std::to_string(n * sizeof(float)) +
                     " bytes for shape " + shape_string(shape) + ", got " +
                     std::to_string(bytes.size()));
  }
  Tensor out(shape);
  for (std::size_t i = 0; i < n; ++i) {
    float f;
    std::memcpy(&f, bytes.data() + i * sizeof(float), sizeof(f));
    out[i] = f;
  }
  return out;
}

Tensor hflip(const Tensor& image) {
  Tensor out(image.shape());
  const std::size_t w = image.cols(), rows = image.rows();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = image[r * w + (w - 1 - x)];
  return out;
}

void SampleSource::add_domain(const SyntheticDomainSpec& spec) {
  domains_.insert_or_assign(spec.domain_tag, SyntheticDomain(spec));
}

Tensor SampleSource::load(const std::string& ref) const {
  const Shape shape{channels_, image_size_, image_size_};
  Tensor img;
  SynthRef sref;
  if (parse_synth_ref(ref, sref)) {
    auto it = domains_.find(sref.domain_tag);
    if (it == domains_.end()) {
      throw ConfigError("sample " + ref + ": no synthetic domain \"" + sref.domain_tag +
                        "\" is configured");
    }
    img = it->second.sample(sref.index);
  } else {
    const std::filesystem::path p = root_.empty() ? std::filesystem::path(ref) : root_ / ref;
    const auto ext = p.extension().string();
    if (ext == ".raw") {
      img = read_raw_f32(p, shape);
    } else if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
      img = read_pnm(p);
    } else {
      throw ParseError("sample " + ref + ": unsupported image format (use .pgm, .ppm or .raw)");
    }
  }
  if (img.shape() != shape) {
    throw DimensionError("sample " + ref + " has shape " + shape_string(img.shape()) +
                         ", model expects " + shape_string(shape));
  }
  return img;
}

LabeledImages materialize(const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                          const SampleSource& source, bool flip) {
  LabeledImages out;
  out.num_classes = manifest.num_classes;
  std::size_t stride = 0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const ManifestEntry& e = manifest.entries.at(indices[k]);
    Tensor img = source.load(e.sample_ref);
    if (flip) img = hflip(img);
    if (k == 0) {
      stride = img.size();
      Shape shape{indices.size()};
      shape.insert(shape.end(), img.shape().begin(), img.shape().end());
      out.images = Tensor(shape);
    }
    std::copy_n(img.raw(), stride, out.images.raw() + k * stride);
    out.labels.push_back(e.label);
    out.patients.push_back(e.patient_id);
  }
  return out;
}

LabeledImages materialize_all(const DatasetManifest& manifest, const SampleSource& source) {
  std::vector<std::size_t> idx(manifest.entries.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return materialize(manifest, idx, source);
}

std::pair<DatasetManifest, SyntheticDomain> synth_dataset(const SyntheticDomainSpec& spec) {
  SyntheticDomain domain(spec);
  DatasetManifest m = domain.manifest();
  return {std::move(m), std::move(domain)};
}

LabeledImages synth_images(const SyntheticDomainSpec& spec) {
  SyntheticDomain domain(spec);
  LabeledImages out;
  out.num_classes = spec.num_classes;
  out.images = Tensor({spec.num_samples, spec.channels, spec.image_size, spec.image_size});
  const std::size_t stride = spec.pixels();
  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    const Tensor img = domain.sample(i);
    std::copy_n(img.raw(), stride, out.images.raw() + i * stride);
    out.labels.push_back(domain.label(i));
    out.patients.push_back(domain.patient(i));
  }
  return out;
}

}  // namespace vpl
