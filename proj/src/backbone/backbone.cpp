#include "vpl/backbone/backbone.hpp"

#include <algorithm>

#include "vpl/numcore/checkpoint.hpp"
#include "vpl/numcore/error.hpp"
#include "vpl/numcore/ops.hpp"

namespace vpl {

namespace {

constexpr double kInitStd = 0.02;

std::string block_id(std::size_t layer, const char* leaf) {
  return "block." + std::to_string(layer) + "." + leaf;
}

}  // namespace

void BackboneConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("backbone: image_size " + std::to_string(image_size) +
                      " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (heads == 0 || dim == 0 || dim % heads != 0) {
    throw ConfigError("backbone: dim " + std::to_string(dim) + " is not divisible by heads " +
                      std::to_string(heads));
  }
  if (in_channels == 0) throw ConfigError("backbone: in_channels must be >= 1");
  if (mlp_ratio == 0) throw ConfigError("backbone: mlp_ratio must be >= 1");
  if (num_classes == 0) throw ConfigError("backbone: num_classes must be >= 1");
}

BackboneConfig BackboneConfig::tiny() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::vit_b(std::size_t num_classes) {
  BackboneConfig c;
  c.image_size = 224;
  c.patch_size = 16;
  c.in_channels = 3;
  c.dim = 768;
  c.depth = 12;
  c.heads = 12;
  c.mlp_ratio = 4;
  c.num_classes = num_classes;
  return c;
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size}, {"patch_size", c.patch_size},
                     {"in_channels", c.in_channels}, {"dim", c.dim},
                     {"depth", c.depth}, {"heads", c.heads},
                     {"mlp_ratio", c.mlp_ratio}, {"num_classes", c.num_classes},
                     {"pooling", c.pooling == Pooling::kClassToken ? "cls" : "mean"}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  static const char* const kKeys[] = {"image_size", "patch_size", "in_channels", "dim",   "depth",
                                      "heads",      "mlp_ratio",  "num_classes", "pooling"};
  if (!j.is_object()) throw ConfigError("backbone config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw ConfigError("backbone config: unknown key \"" + key + "\"");
    }
  }
  BackboneConfig d;
  auto get = [&](const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_unsigned()) {
      throw ConfigError(std::string("backbone config: \"") + key + "\" must be a positive integer");
    }
    return j[key].get<std::size_t>();
  };
  c.image_size = get("image_size", d.image_size);
  c.patch_size = get("patch_size", d.patch_size);
  c.in_channels = get("in_channels", d.in_channels);
  c.dim = get("dim", d.dim);
  c.depth = get("depth", d.depth);
  c.heads = get("heads", d.heads);
  c.mlp_ratio = get("mlp_ratio", d.mlp_ratio);
  c.num_classes = get("num_classes", d.num_classes);
  c.pooling = Pooling::kClassToken;
  if (j.contains("pooling")) {
    const auto p = j["pooling"].get<std::string>();
    if (p == "mean") {
      c.pooling = Pooling::kMean;
    } else if (p != "cls") {
      throw ConfigError("backbone config: pooling must be \"cls\" or \"mean\", got \"" + p + "\"");
    }
  }
  c.validate();
}

std::vector<std::pair<std::string, Shape>> backbone_shapes(const BackboneConfig& c,
                                                           bool include_head) {
  const std::size_t d = c.dim, h = c.mlp_hidden();
  std::vector<std::pair<std::string, Shape>> s;
  s.emplace_back("patch_embed.weight", Shape{c.patch_dim(), d});
  s.emplace_back("patch_embed.bias", Shape{d});
  s.emplace_back("cls_token", Shape{1, d});
  s.emplace_back("pos_embed", Shape{c.num_patches() + 1, d});
  for (std::size_t l = 0; l < c.depth; ++l) {
    s.emplace_back(block_id(l, "ln1.weight"), Shape{d});
    s.emplace_back(block_id(l, "ln1.bias"), Shape{d});
    s.emplace_back(block_id(l, "attn.qkv.weight"), Shape{d, 3 * d});
    s.emplace_back(block_id(l, "attn.qkv.bias"), Shape{3 * d});
    s.emplace_back(block_id(l, "attn.proj.weight"), Shape{d, d});
    s.emplace_back(block_id(l, "attn.proj.bias"), Shape{d});
    s.emplace_back(block_id(l, "ln2.weight"), Shape{d});
    s.emplace_back(block_id(l, "ln2.bias"), Shape{d});
    s.emplace_back(block_id(l, "mlp.up.weight"), Shape{d, h});
    s.emplace_back(block_id(l, "mlp.up.bias"), Shape{h});
    s.emplace_back(block_id(l, "mlp.down.weight"), Shape{h, d});
    s.emplace_back(block_id(l, "mlp.down.bias"), Shape{d});
  }
  s.emplace_back("final_ln.weight", Shape{d});
  s.emplace_back("final_ln.bias", Shape{d});
  if (include_head) {
    s.emplace_back("head.weight", Shape{d, c.num_classes});
    s.emplace_back("head.bias", Shape{c.num_classes});
  }
  return s;
}

std::size_t encoder_param_count(const BackboneConfig& c) {
  const std::size_t d = c.dim, h = c.mlp_hidden();
  const std::size_t patch = c.patch_dim() * d + d;
  const std::size_t pos = (c.num_patches() + 1) * d;
  const std::size_t block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * h + h) +
                            (h * d + d);
  return patch + pos + d + c.depth * block + 2 * d;
}

std::size_t param_count(const BackboneConfig& c) {
  return encoder_param_count(c) + c.dim * c.num_classes + c.num_classes;
}

void init_backbone_params(ParameterSet& set, const BackboneConfig& config,
                          const std::string& prefix, Rng& rng, bool include_head) {
  config.validate();
  for (auto& [name, shape] : backbone_shapes(config, include_head)) {
    const bool is_ln = name.find("ln") != std::string::npos;
    const bool is_bias = name.ends_with(".bias");
    Tensor value(shape);
    if (is_ln && name.ends_with(".weight")) {
      value.fill(1.0);
    } else if (!is_bias && name != "cls_token") {
      value = truncated_normal_tensor(rng, shape, kInitStd);
    }
    set.add(prefix + name, std::move(value));
  }
}

Backbone init_backbone(const BackboneConfig& config, std::uint64_t seed, std::string domain_tag) {
  Backbone b;
  b.config = config;
  b.domain_tag = std::move(domain_tag);
  Rng rng(seed);
  init_backbone_params(b.params, config, "", rng, true);
  return b;
}

Tensor patchify(const Tensor& images, const BackboneConfig& c) {
  if (images.rank() != 4 || images.dim(1) != c.in_channels || images.dim(2) != c.image_size ||
      images.dim(3) != c.image_size) {
    throw DimensionError("patchify: expected B x " + std::to_string(c.in_channels) + " x " +
                         std::to_string(c.image_size) + " x " + std::to_string(c.image_size) +
                         ", got " + shape_string(images.shape()));
  }
  const std::size_t b = images.dim(0), g = c.grid(), p = c.patch_size, s = c.image_size;
  const std::size_t pd = c.patch_dim();
  Tensor out({b * c.num_patches(), pd});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t gy = 0; gy < g; ++gy) {
      for (std::size_t gx = 0; gx < g; ++gx) {
        double* row = out.raw() + ((n * g + gy) * g + gx) * pd;
        std::size_t k = 0;
        for (std::size_t ch = 0; ch < c.in_channels; ++ch)
          for (std::size_t y = 0; y < p; ++y)
            for (std::size_t x = 0; x < p; ++x)
              row[k++] = images[((n * c.in_channels + ch) * s + gy * p + y) * s + gx * p + x];
      }
    }
  }
  return out;
}

Var encoder_block(const BackboneConfig& c, const ParamScope& ps, std::size_t l, Var x,
                  const TokenLayout& layout) {
  Tape& t = *x.tape;
  auto p = [&](const char* leaf) { return t.param(ps.at(block_id(l, leaf))); };
  Var y = layer_norm(x, p("ln1.weight"), p("ln1.bias"));
  Var qkv = add_row(matmul(y, p("attn.qkv.weight")), p("attn.qkv.bias"));
  Var a = self_attention(qkv, layout.batch, layout.tokens, c.heads);
  a = add_row(matmul(a, p("attn.proj.weight")), p("attn.proj.bias"));
  x = add(x, a);
  y = layer_norm(x, p("ln2.weight"), p("ln2.bias"));
  Var m = gelu(add_row(matmul(y, p("mlp.up.weight")), p("mlp.up.bias")));
  m = add_row(matmul(m, p("mlp.down.weight")), p("mlp.down.bias"));
  return add(x, m);
}

Var pool_tokens(const BackboneConfig& c, Var tokens, const TokenLayout& layout) {
  std::vector<RowRef> map;
  if (c.pooling == Pooling::kClassToken) {
    for (std::size_t n = 0; n < layout.batch; ++n) map.push_back({0, n * layout.tokens});
    return gather_rows({tokens}, map);
  }
  const std::size_t first = 1 + layout.prompts;
  const std::size_t count = layout.tokens - first;
  for (std::size_t n = 0; n < layout.batch; ++n)
    for (std::size_t i = 0; i < count; ++i) map.push_back({0, n * layout.tokens + first + i});
  return segment_mean(gather_rows({tokens}, map), count);
}

Var forward_features(const BackboneConfig& c, const ParamScope& ps, Tape& t, const Tensor& images,
                     Injector* injector) {
  c.validate();
  const Tensor patches = patchify(images, c);
  const std::size_t b = images.dim(0), np = c.num_patches();
  Var x = add_row(matmul(t.constant(patches), t.param(ps.at("patch_embed.weight"))),
                  t.param(ps.at("patch_embed.bias")));

  TokenLayout layout{b, np + 1, 0};
  std::vector<RowRef> seq, pos;
  for (std::size_t n = 0; n < b; ++n) {
    seq.push_back({0, 0});
    pos.push_back({0, 0});
    for (std::size_t i = 0; i < np; ++i) {
      seq.push_back({1, n * np + i});
      pos.push_back({0, i + 1});
    }
  }
  Var tokens = gather_rows({t.param(ps.at("cls_token")), x}, seq);
  tokens = add(tokens, gather_rows({t.param(ps.at("pos_embed"))}, pos));

  auto check = [&](Var v, std::size_t layer, const char* where) {
    if (v.value().rank() != 2 || v.value().cols() != c.dim) {
      throw DimensionError("injector " + std::string(where) + " at layer " +
                           std::to_string(layer) + " returned width " +
                           std::to_string(v.value().cols()) + ", expected " +
                           std::to_string(c.dim));
    }
    if (v.value().rows() != layout.batch * layout.tokens) {
      throw DimensionError("injector " + std::string(where) + " at layer " +
                           std::to_string(layer) + " returned " +
                           std::to_string(v.value().rows()) + " rows for layout " +
                           std::to_string(layout.batch) + "x" + std::to_string(layout.tokens));
    }
  };

  for (std::size_t l = 0; l < c.depth; ++l) {
    if (injector) {
      const std::size_t before = layout.tokens;
      tokens = injector->before_block(l, tokens, layout);
      if (l > 0 && layout.tokens != before) {
        throw DimensionError("injector changed sequence length at layer " + std::to_string(l) +
                             "; only layer 0 may insert tokens");
      }
      check(tokens, l, "before_block");
    }
    tokens = encoder_block(c, ps, l, tokens, layout);
    if (injector) {
      tokens = injector->after_block(l, tokens, layout);
      check(tokens, l, "after_block");
    }
  }
  Var pooled = pool_tokens(c, tokens, layout);
  return layer_norm(pooled, t.param(ps.at("final_ln.weight")), t.param(ps.at("final_ln.bias")));
}

Var forward_features(Backbone& model, Tape& tape, const Tensor& images, Injector* injector) {
  return forward_features(model.config, model.scope(), tape, images, injector);
}

Var predict(Var features, Var head_weight, Var head_bias) {
  if (features.value().cols() != head_weight.value().dim(0)) {
    throw DimensionError("predict: head expects width " +
                         std::to_string(head_weight.value().dim(0)) + ", features have " +
                         std::to_string(features.value().cols()));
  }
  return add_row(matmul(features, head_weight), head_bias);
}

Var predict(Backbone& model, Tape& tape, Var features) {
  return predict(features, tape.param(model.params.at("head.weight")),
                 tape.param(model.params.at("head.bias")));
}

std::string encode_backbone(const Backbone& model) {
  nlohmann::json meta{{"format", "VPL1"},
                      {"kind", "backbone"},
                      {"version", 1},
                      {"config", model.config},
                      {"domain_tag", model.domain_tag}};
  std::vector<NamedTensor> tensors;
  for (const auto& p : model.params) tensors.push_back({p.id, p.value});
  return encode_checkpoint(meta, tensors);
}

Backbone decode_backbone(const std::string& bytes) {
  CheckpointData data = decode_checkpoint(bytes);
  if (data.meta.value("kind", "") != "backbone") {
    throw ParseError("checkpoint is not a backbone (kind=" + data.meta.value("kind", "?") + ")");
  }
  Backbone b;
  try {
    b.config = data.meta.at("config").get<BackboneConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("backbone checkpoint: bad config: ") + e.what());
  }
  b.domain_tag = data.meta.value("domain_tag", "");
  for (const auto& [name, shape] : backbone_shapes(b.config)) {
    const Tensor& v = data.tensor(name);
    if (v.shape() != shape) {
      throw ParseError("backbone checkpoint: " + name + " has shape " + shape_string(v.shape()) +
                       ", expected " + shape_string(shape));
    }
    b.params.add(name, v);
  }
  return b;
}

void save_backbone(const std::filesystem::path& path, const Backbone& model) {
  write_file_bytes(path, encode_backbone(model));
}

Backbone load_backbone(const std::filesystem::path& path) {
  return decode_backbone(read_file_bytes(path));
}

}  // namespace vpl
