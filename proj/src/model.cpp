// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/model.hpp"

#include <cmath>
#include <string>

#include "alora/error.hpp"
#include "alora/rng.hpp"

namespace alora {

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || d_head == 0 ||
      vocab_size == 0 || max_positions == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model != n_heads * d_head) {
    throw ConfigError("d_model (" + std::to_string(d_model) +
                      ") must equal n_heads * d_head (" +
                      std::to_string(n_heads * d_head) + ")");
  }
  if (d_head % 2 != 0) {
    throw ConfigError("d_head must be even for rotary embeddings");
  }
  if (!(rope_theta > 0.0) || !std::isfinite(rope_theta)) {
    throw ConfigError("rope_theta must be positive");
  }
}

namespace {

void expect_shape(const Matrix<float>& m, std::size_t rows, std::size_t cols,
                  const std::string& name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ConfigError(name + " has shape " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", expected " +
                      std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (!m.all_finite()) throw ConfigError(name + " contains non-finite values");
}

void expect_gain(const std::vector<float>& v, std::size_t size,
                 const std::string& name) {
  if (v.size() != size) throw ConfigError(name + " has wrong length");
  for (float x : v) {
    if (!std::isfinite(x)) {
      throw ConfigError(name + " contains non-finite values");
    }
  }
}

Matrix<float> gaussian(std::size_t rows, std::size_t cols, double stddev,
                       Rng& rng) {
  Matrix<float> m(rows, cols);
  for (auto& v : m.flat()) v = static_cast<float>(rng.normal(0.0, stddev));
  return m;
}

}  // namespace

void validate_weights(const ModelWeights& w) {
  const auto& c = w.config;
  c.validate();
  const std::size_t d = c.d_model;
  expect_shape(w.token_embedding, c.vocab_size, d, "token_embedding");
  if (w.layers.size() != c.n_layers) {
    throw ConfigError("layer count does not match config");
  }
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    expect_shape(layer.wq, d, d, p + "wq");
    expect_shape(layer.wk, d, d, p + "wk");
    expect_shape(layer.wv, d, d, p + "wv");
    expect_shape(layer.wo, d, d, p + "wo");
    expect_shape(layer.w_up, d, c.mlp_width(), p + "w_up");
    expect_shape(layer.w_down, c.mlp_width(), d, p + "w_down");
    expect_gain(layer.attn_norm, d, p + "attn_norm");
    expect_gain(layer.mlp_norm, d, p + "mlp_norm");
  }
  expect_gain(w.final_norm, d, "final_norm");
  expect_shape(w.unembedding, d, c.vocab_size, "unembedding");
}

ModelWeights random_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  constexpr double kStd = 0.02;
  const double residual_std =
      kStd / std::sqrt(static_cast<double>(config.n_layers));
  const std::size_t d = config.d_model;

  ModelWeights w;
  w.config = config;
  w.token_embedding = gaussian(config.vocab_size, d, kStd, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights<float> layer;
    layer.wq = gaussian(d, d, kStd, rng);
    layer.wk = gaussian(d, d, kStd, rng);
    layer.wv = gaussian(d, d, kStd, rng);
    layer.wo = gaussian(d, d, residual_std, rng);
    layer.w_up = gaussian(d, config.mlp_width(), kStd, rng);
    layer.w_down = gaussian(config.mlp_width(), d, residual_std, rng);
    layer.attn_norm.assign(d, 1.0f);
    layer.mlp_norm.assign(d, 1.0f);
    w.layers.push_back(std::move(layer));
  }
  w.final_norm.assign(d, 1.0f);
  w.unembedding = gaussian(d, config.vocab_size, kStd, rng);
  return w;
}

}  // namespace alora
