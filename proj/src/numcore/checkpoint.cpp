#include "vpl/numcore/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vpl/numcore/error.hpp"

namespace vpl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian");

const Tensor& CheckpointData::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ParseError("checkpoint: missing tensor " + name);
}

std::string encode_checkpoint(const nlohmann::json& meta, const std::vector<NamedTensor>& tensors) {
  nlohmann::json header = meta;
  header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    header["tensors"].push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}});
    offset += t.value.size();
  }
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 4);
  const std::uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += text;
  const std::size_t payload_start = out.size();
  out.resize(payload_start + offset * sizeof(float));
  char* dst = out.data() + payload_start;
  for (const auto& t : tensors) {
    for (double v : t.value.data()) {
      const float f = static_cast<float>(v);
      std::memcpy(dst, &f, sizeof(f));
      dst += sizeof(f);
    }
  }
  return out;
}

CheckpointData decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw ParseError("checkpoint: bad magic (expected VPL1)");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 4, sizeof(len));
  if (len > bytes.size() - 12) throw ParseError("checkpoint: truncated header");
  CheckpointData data;
  try {
    data.meta = nlohmann::json::parse(bytes.substr(12, len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  const std::size_t payload = 12 + len;
  const std::size_t floats = (bytes.size() - payload) / sizeof(float);
  if (!data.meta.contains("tensors") || !data.meta["tensors"].is_array()) {
    throw ParseError("checkpoint: header lacks a tensors array");
  }
  for (const auto& entry : data.meta["tensors"]) {
    NamedTensor t;
    Shape shape;
    std::size_t offset = 0;
    try {
      t.name = entry.at("name").get<std::string>();
      shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("checkpoint: malformed tensor entry: ") + e.what());
    }
    const std::size_t n = shape_size(shape);
    if (offset + n > floats) throw ParseError("checkpoint: tensor " + t.name + " out of bounds");
    std::vector<double> values(n);
    const char* src = bytes.data() + payload + offset * sizeof(float);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, src + i * sizeof(float), sizeof(f));
      values[i] = f;
    }
    t.value = Tensor(shape, std::move(values));
    data.tensors.push_back(std::move(t));
  }
  data.meta.erase("tensors");
  return data;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::vector<NamedTensor>& tensors) {
  write_file_bytes(path, encode_checkpoint(meta, tensors));
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string file_sha256(const std::filesystem::path& path) {
  return sha256_hex(read_file_bytes(path));
}

Tensor round_to_f32(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace vpl
