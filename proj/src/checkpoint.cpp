// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/checkpoint.hpp"

#include <string>

#include "alora/error.hpp"
#include "container.hpp"

namespace alora {
namespace {

constexpr std::string_view kMagic = "ALRE";

std::string layer_name(std::size_t l, const char* field) {
  return "layers." + std::to_string(l) + "." + field;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelWeights& w) {
  validate_weights(w);
  const auto& c = w.config;
  detail::ContainerWriter writer;
  writer.add("token_embedding", w.token_embedding);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    writer.add(layer_name(l, "wq"), layer.wq);
    writer.add(layer_name(l, "wk"), layer.wk);
    writer.add(layer_name(l, "wv"), layer.wv);
    writer.add(layer_name(l, "wo"), layer.wo);
    writer.add(layer_name(l, "w_up"), layer.w_up);
    writer.add(layer_name(l, "w_down"), layer.w_down);
    writer.add(layer_name(l, "attn_norm"), layer.attn_norm);
    writer.add(layer_name(l, "mlp_norm"), layer.mlp_norm);
  }
  writer.add("final_norm", w.final_norm);
  writer.add("unembedding", w.unembedding);

  nlohmann::json header;
  header["config"] = {{"n_layers", c.n_layers},
                      {"n_heads", c.n_heads},
                      {"d_model", c.d_model},
                      {"d_head", c.d_head},
                      {"vocab_size", c.vocab_size},
                      {"max_positions", c.max_positions},
                      {"rope_theta", c.rope_theta}};
  return writer.finish(kMagic, kCheckpointVersion, std::move(header));
}

ModelWeights decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ContainerReader reader(bytes, kMagic, kCheckpointVersion);
  ModelWeights w;
  try {
    const auto& j = reader.header().at("config");
    w.config.n_layers = j.at("n_layers").get<std::size_t>();
    w.config.n_heads = j.at("n_heads").get<std::size_t>();
    w.config.d_model = j.at("d_model").get<std::size_t>();
    w.config.d_head = j.at("d_head").get<std::size_t>();
    w.config.vocab_size = j.at("vocab_size").get<std::size_t>();
    w.config.max_positions = j.at("max_positions").get<std::size_t>();
    w.config.rope_theta = j.at("rope_theta").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed config: ") + e.what(),
                      reader.header_offset());
  }
  try {
    w.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), reader.header_offset());
  }
  const auto& c = w.config;
  const std::size_t d = c.d_model;
  w.token_embedding = reader.matrix("token_embedding", c.vocab_size, d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerWeights<float> layer;
    layer.wq = reader.matrix(layer_name(l, "wq"), d, d);
    layer.wk = reader.matrix(layer_name(l, "wk"), d, d);
    layer.wv = reader.matrix(layer_name(l, "wv"), d, d);
    layer.wo = reader.matrix(layer_name(l, "wo"), d, d);
    layer.w_up = reader.matrix(layer_name(l, "w_up"), d, c.mlp_width());
    layer.w_down = reader.matrix(layer_name(l, "w_down"), c.mlp_width(), d);
    layer.attn_norm = reader.vector(layer_name(l, "attn_norm"), d);
    layer.mlp_norm = reader.vector(layer_name(l, "mlp_norm"), d);
    w.layers.push_back(std::move(layer));
  }
  w.final_norm = reader.vector("final_norm", d);
  w.unembedding = reader.matrix("unembedding", d, c.vocab_size);
  validate_weights(w);
  return w;
}

void save_checkpoint(const ModelWeights& weights,
                     const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(weights));
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

}  // namespace alora
