#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vpl/numcore/parameter.hpp"
#include "vpl/numcore/rng.hpp"
#include "vpl/numcore/tape.hpp"

namespace vpl {

enum class Pooling { kClassToken, kMean };

struct BackboneConfig {
  std::size_t image_size = 8;
  std::size_t patch_size = 4;
  std::size_t in_channels = 1;
  std::size_t dim = 16;
  std::size_t depth = 2;
  std::size_t heads = 2;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 3;
  Pooling pooling = Pooling::kClassToken;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return in_channels * patch_size * patch_size; }
  std::size_t mlp_hidden() const { return dim * mlp_ratio; }
  std::size_t pixels() const { return in_channels * image_size * image_size; }

  /// Throws ConfigError when the geometry is inconsistent.
  void validate() const;

  bool operator==(const BackboneConfig&) const = default;

  /// The D=16, depth-2 model used throughout the tests.
  static BackboneConfig tiny();
  /// ViT-B/16 at 224 pixels.
  static BackboneConfig vit_b(std::size_t num_classes = 1000);
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

/// Named parameter shapes of the backbone in canonical order.
std::vector<std::pair<std::string, Shape>> backbone_shapes(const BackboneConfig& config,
                                                           bool include_head = true);

/// Closed-form parameter total of the named set, head included.
std::size_t param_count(const BackboneConfig& config);
/// Same total without the classification head.
std::size_t encoder_param_count(const BackboneConfig& config);

struct Backbone {
  BackboneConfig config;
  ParameterSet params;
  std::string domain_tag = "general";

  ParamScope scope() { return ParamScope(params); }
};

/// Adds freshly initialized backbone parameters to `set` under `prefix`:
/// truncated normal (std 0.02) weights and embeddings, zero biases and class
/// token, unit layer-norm gains.
void init_backbone_params(ParameterSet& set, const BackboneConfig& config,
                          const std::string& prefix, Rng& rng, bool include_head = true);

Backbone init_backbone(const BackboneConfig& config, std::uint64_t seed,
                       std::string domain_tag = "general");

/// Token sequence bookkeeping: rows of the token matrix are grouped per
/// sample, `tokens` rows each. Prompt tokens, when present, sit right after
/// the class token.
struct TokenLayout {
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::size_t prompts = 0;
};

/// Per-layer hook into the encoder. Tokens are (batch*tokens) x D.
class Injector {
 public:
  virtual ~Injector() = default;
  virtual Var before_block(std::size_t /*layer*/, Var tokens, TokenLayout& /*layout*/) {
    return tokens;
  }
  virtual Var after_block(std::size_t /*layer*/, Var tokens, const TokenLayout& /*layout*/) {
    return tokens;
  }
};

/// images (B x C x H x W) -> patches (B*num_patches x patch_dim), patches in
/// raster order, each flattened as (channel, row, col).
Tensor patchify(const Tensor& images, const BackboneConfig& config);

/// Encoder forward: patch embedding, class token, positional embedding,
/// pre-norm blocks, final layer norm, pooling. Returns B x D features.
Var forward_features(const BackboneConfig& config, const ParamScope& params, Tape& tape,
                     const Tensor& images, Injector* injector = nullptr);
Var forward_features(Backbone& model, Tape& tape, const Tensor& images,
                     Injector* injector = nullptr);

/// One pre-norm transformer block on (batch*tokens) x D rows.
Var encoder_block(const BackboneConfig& config, const ParamScope& params, std::size_t layer,
                  Var tokens, const TokenLayout& layout);

/// Selects the pooled row per sample (class token, or mean of patch tokens).
Var pool_tokens(const BackboneConfig& config, Var tokens, const TokenLayout& layout);

/// Affine head: features (B x D) * weight (D x K) + bias (K).
Var predict(Var features, Var head_weight, Var head_bias);
Var predict(Backbone& model, Tape& tape, Var features);

// Checkpoint: "VPL1" container with kind "backbone".
std::string encode_backbone(const Backbone& model);
Backbone decode_backbone(const std::string& bytes);
void save_backbone(const std::filesystem::path& path, const Backbone& model);
Backbone load_backbone(const std::filesystem::path& path);

}  // namespace vpl
