// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "alora/tensor.hpp"

namespace alora {

using TokenId = std::uint32_t;

// End-of-sequence id for the byte-level toy vocabulary.
inline constexpr TokenId kEosToken = 0;

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_model = 64;
  std::size_t d_head = 16;
  std::size_t vocab_size = 256;
  std::size_t max_positions = 8192;
  double rope_theta = 10000.0;

  std::size_t mlp_width() const { return 4 * d_model; }
  // Bytes of key plus value storage for one position across all layers.
  std::size_t kv_row_bytes() const {
    return n_layers * 2 * d_model * sizeof(float);
  }

  // Throws ConfigError when any field is out of range or d_model differs
  // from n_heads × d_head.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerWeights {
  Matrix<T> wq, wk, wv, wo;  // d_model × d_model
  Matrix<T> w_up;            // d_model × 4·d_model
  Matrix<T> w_down;          // 4·d_model × d_model
  std::vector<T> attn_norm;  // d_model
  std::vector<T> mlp_norm;   // d_model

  const Matrix<T>& projection(std::size_t which) const {
    return which == 0 ? wq : which == 1 ? wk : wv;
  }
};

template <typename T>
struct Weights {
  ModelConfig config;
  Matrix<T> token_embedding;  // vocab × d_model
  std::vector<LayerWeights<T>> layers;
  std::vector<T> final_norm;  // d_model
  Matrix<T> unembedding;      // d_model × vocab

  template <typename U>
  Weights<U> cast() const {
    Weights<U> out;
    out.config = config;
    out.token_embedding = token_embedding.template cast<U>();
    out.layers.reserve(layers.size());
    for (const auto& l : layers) {
      LayerWeights<U> c;
      c.wq = l.wq.template cast<U>();
      c.wk = l.wk.template cast<U>();
      c.wv = l.wv.template cast<U>();
      c.wo = l.wo.template cast<U>();
      c.w_up = l.w_up.template cast<U>();
      c.w_down = l.w_down.template cast<U>();
      c.attn_norm = cast_vector<U>(l.attn_norm);
      c.mlp_norm = cast_vector<U>(l.mlp_norm);
      out.layers.push_back(std::move(c));
    }
    out.final_norm = cast_vector<U>(final_norm);
    out.unembedding = unembedding.template cast<U>();
    return out;
  }
};

using ModelWeights = Weights<float>;

// Checks shapes against `weights.config` and that every entry is finite.
// Throws ConfigError.
void validate_weights(const ModelWeights& weights);

// Gaussian weights with std 0.02; the residual-path matrices (W_O and the MLP
// down projection) use 0.02/sqrt(n_layers). Norm gains start at one.
ModelWeights random_model(const ModelConfig& config, std::uint64_t seed);

}  // namespace alora
