#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "vpl/numcore/parameter.hpp"
#include "vpl/numcore/tensor.hpp"

namespace vpl {

// Container layout:
//   "VPL1" | u64 LE header length | JSON header | f32 LE payload
// The header carries caller metadata plus a "tensors" array of
// {name, shape, offset} where offset counts f32 elements into the payload.

inline constexpr char kCheckpointMagic[4] = {'V', 'P', 'L', '1'};

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct CheckpointData {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const Tensor& tensor(const std::string& name) const;
};

std::string encode_checkpoint(const nlohmann::json& meta, const std::vector<NamedTensor>& tensors);
CheckpointData decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const std::vector<NamedTensor>& tensors);
CheckpointData read_checkpoint(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

/// Lowercase hex SHA-256.
std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::filesystem::path& path);

/// Rounds every entry to f32 precision, as a checkpoint round-trip would.
Tensor round_to_f32(const Tensor& t);

}  // namespace vpl
