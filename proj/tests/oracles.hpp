// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

// Independent reference implementations used as test oracles. They share no
// code with the library beyond plain data types.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "alora/adapter.hpp"
#include "alora/kv_cache.hpp"
#include "alora/model.hpp"

namespace oracle {

using alora::Matrix;
using alora::TokenId;

inline bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

inline Matrix<float> mat(std::size_t rows, std::size_t cols,
                         std::initializer_list<float> values) {
  Matrix<float> m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

inline alora::ModelConfig tiny_config() {
  alora::ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_head = 8;
  c.vocab_size = 64;
  c.max_positions = 512;
  return c;
}

// Row-vector times matrix with ascending accumulation.
inline std::vector<float> vec_mat(std::span<const float> x, const Matrix<float>& w) {
  std::vector<float> y(w.cols(), 0.0f);
  for (std::size_t k = 0; k < w.rows(); ++k) {
    for (std::size_t j = 0; j < w.cols(); ++j) y[j] += x[k] * w(k, j);
  }
  return y;
}

inline std::vector<float> rms(std::span<const float> x, std::span<const float> g) {
  float ss = 0.0f;
  for (float v : x) ss += v * v;
  const float inv =
      1.0f / std::sqrt(ss / static_cast<float>(x.size()) + static_cast<float>(1e-5));
  std::vector<float> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * g[i];
  return y;
}

inline void rotate(std::span<float> v, std::size_t pos, double theta) {
  const std::size_t d = v.size();
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double angle =
        static_cast<double>(pos) *
        std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    const float c = static_cast<float>(std::cos(angle));
    const float s = static_cast<float>(std::sin(angle));
    const float a = v[2 * i], b = v[2 * i + 1];
    v[2 * i] = a * c - b * s;
    v[2 * i + 1] = a * s + b * c;
  }
}

inline float gelu(float x) {
  const float k = static_cast<float>(0.7978845608028654);
  return 0.5f * x *
         (1.0f + std::tanh(k * (x + static_cast<float>(0.044715) * x * x * x)));
}

// Dense causal attention over full Q/K/V matrices (rotated q, k), returning
// the concatenated head outputs before W_O.
inline Matrix<float> dense_attention(const Matrix<float>& q, const Matrix<float>& k,
                                     const Matrix<float>& v, std::size_t n_heads) {
  const std::size_t n = q.rows();
  const std::size_t d = q.cols();
  const std::size_t dh = d / n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  Matrix<float> out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      std::vector<float> s(i + 1);
      for (std::size_t j = 0; j <= i; ++j) {
        float acc = 0.0f;
        for (std::size_t e = 0; e < dh; ++e) acc += q(i, h * dh + e) * k(j, h * dh + e);
        s[j] = acc * scale;
      }
      float m = s[0];
      for (float x : s) m = std::max(m, x);
      float denom = 0.0f;
      for (float& x : s) {
        x = std::exp(x - m);
        denom += x;
      }
      for (float& x : s) x = x / denom;
      for (std::size_t j = 0; j <= i; ++j) {
        for (std::size_t e = 0; e < dh; ++e) out(i, h * dh + e) += s[j] * v(j, h * dh + e);
      }
    }
  }
  return out;
}

// Delta applied at position p in layer l to projection j, or null.
using DeltaAt = std::function<const alora::LowRankDelta*(std::size_t, std::size_t,
                                                         std::size_t)>;

struct Reference {
  Matrix<float> logits;                       // every position
  std::vector<Matrix<float>> keys, values;    // per layer
};

// Whole-sequence forward without any cache.
inline Reference reference_forward(const alora::ModelWeights& w,
                                   const std::vector<TokenId>& tokens,
                                   const DeltaAt& delta_at) {
  const auto& c = w.config;
  const std::size_t n = tokens.size(), d = c.d_model;
  Matrix<float> h(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) h(i, j) = w.token_embedding(tokens[i], j);
  }
  Reference ref;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto& lw = w.layers[l];
    Matrix<float> proj[3] = {Matrix<float>(n, d), Matrix<float>(n, d), Matrix<float>(n, d)};
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = rms(h.row(i), lw.attn_norm);
      for (std::size_t j = 0; j < 3; ++j) {
        std::vector<float> y = vec_mat(x, lw.projection(j));
        if (const auto* delta = delta_at(l, j, i)) {
          const auto low = vec_mat(x, delta->a);
          const auto up = vec_mat(low, delta->b);
          for (std::size_t e = 0; e < d; ++e) y[e] += delta->scale() * up[e];
        }
        std::copy(y.begin(), y.end(), proj[j].row(i).begin());
      }
      for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
        rotate(proj[0].row(i).subspan(hd * c.d_head, c.d_head), i, c.rope_theta);
        rotate(proj[1].row(i).subspan(hd * c.d_head, c.d_head), i, c.rope_theta);
      }
    }
    const Matrix<float> heads = dense_attention(proj[0], proj[1], proj[2], c.n_heads);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = vec_mat(heads.row(i), lw.wo);
      for (std::size_t e = 0; e < d; ++e) h(i, e) += a[e];
      const auto m = rms(h.row(i), lw.mlp_norm);
      auto up = vec_mat(m, lw.w_up);
      for (float& u : up) u = gelu(u);
      const auto down = vec_mat(up, lw.w_down);
      for (std::size_t e = 0; e < d; ++e) h(i, e) += down[e];
    }
    ref.keys.push_back(proj[1]);
    ref.values.push_back(proj[2]);
  }
  ref.logits = Matrix<float>(n, c.vocab_size);
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = rms(h.row(i), w.final_norm);
    const auto lg = vec_mat(f, w.unembedding);
    std::copy(lg.begin(), lg.end(), ref.logits.row(i).begin());
  }
  return ref;
}

inline DeltaAt no_delta() {
  return [](std::size_t, std::size_t, std::size_t) -> const alora::LowRankDelta* {
    return nullptr;
  };
}

inline DeltaAt adapter_from(const alora::AdapterSpec& spec, std::size_t from) {
  return [&spec, from](std::size_t l, std::size_t j,
                       std::size_t p) -> const alora::LowRankDelta* {
    if (p < from) return nullptr;
    const auto& slot = spec.layers[l][j];
    return slot ? &*slot : nullptr;
  };
}

inline std::size_t argmax_scan(std::span<const float> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Start of the last occurrence by trying every offset.
inline std::optional<std::size_t> last_occurrence(const std::vector<TokenId>& hay,
                                                  const std::vector<TokenId>& needle) {
  std::optional<std::size_t> found;
  if (needle.empty() || needle.size() > hay.size()) return found;
  for (std::size_t s = 0; s + needle.size() <= hay.size(); ++s) {
    bool ok = true;
    for (std::size_t k = 0; k < needle.size(); ++k) ok = ok && hay[s + k] == needle[k];
    if (ok) found = s;
  }
  return found;
}

// Bytes of every distinct storage block reachable from `caches`.
inline std::uint64_t unique_block_bytes(std::span<const alora::KvCache* const> caches) {
  std::set<const void*> seen;
  std::uint64_t total = 0;
  for (const auto* c : caches) {
    for (const auto& b : c->blocks()) {
      if (seen.insert(b.id).second) total += b.positions * c->row_bytes();
    }
  }
  return total;
}

// Hand-derived flop count of one forward over `fresh` rows at positions
// [start, start + fresh) with `adapted` delta rows of rank r on all three
// projections and one unembedding.
inline std::uint64_t forward_flops(const alora::ModelConfig& c, std::uint64_t start,
                                   std::uint64_t fresh, std::uint64_t adapted,
                                   std::uint64_t rank) {
  const std::uint64_t d = c.d_model, L = c.n_layers, V = c.vocab_size;
  std::uint64_t keys = 0;
  for (std::uint64_t p = start; p < start + fresh; ++p) keys += p + 1;
  std::uint64_t per_layer = 0;
  per_layer += 3 * fresh * 2 * d * d;        // Q, K, V
  per_layer += adapted * 3 * (2 * d * rank + 2 * rank * d);
  per_layer += keys * 2 * d;                 // scores
  per_layer += keys * c.n_heads;             // exponentials
  per_layer += keys * 2 * d;                 // weighted sums of values
  per_layer += fresh * 2 * d * d;            // W_O
  per_layer += fresh * 2 * d * 4 * d * 2;    // MLP up and down
  return L * per_layer + 2 * d * V;
}

}  // namespace oracle
