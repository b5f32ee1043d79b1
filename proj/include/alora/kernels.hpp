// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

// Scalar building blocks shared by the inference engine (float) and the
// trainer (float or double).
//
// Every reduction accumulates sequentially in ascending index order. A row's
// result therefore depends only on that row's inputs, never on how many rows
// are processed together, which is what makes cached and uncached passes
// agree bit for bit. Loops that run over independent outputs may be
// vectorized by the compiler without changing any individual result.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "alora/tensor.hpp"

namespace alora::kernels {

inline constexpr double kRmsEpsilon = 1e-5;

// y = x · W for W of shape k×n.
template <typename T>
void matvec(std::span<const T> x, const Matrix<T>& w, std::span<T> y) {
  const std::size_t n = w.cols();
  std::fill(y.begin(), y.begin() + n, T(0));
  for (std::size_t k = 0; k < w.rows(); ++k) {
    const T xk = x[k];
    const T* wr = w.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) y[j] += xk * wr[j];
  }
}

// dx += dy · Wᵀ for W of shape k×n.
template <typename T>
void matvec_transposed_add(std::span<const T> dy, const Matrix<T>& w,
                           std::span<T> dx) {
  const std::size_t n = w.cols();
  for (std::size_t k = 0; k < w.rows(); ++k) {
    const T* wr = w.data() + k * n;
    T acc = T(0);
    for (std::size_t j = 0; j < n; ++j) acc += dy[j] * wr[j];
    dx[k] += acc;
  }
}

// G += uᵀ · v, G of shape |u|×|v|.
template <typename T>
void outer_add(std::span<const T> u, std::span<const T> v, Matrix<T>& g) {
  for (std::size_t i = 0; i < u.size(); ++i) {
    const T ui = u[i];
    T* gr = g.data() + i * g.cols();
    for (std::size_t j = 0; j < v.size(); ++j) gr[j] += ui * v[j];
  }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// y += scale · (u · B). `scratch` holds u · B.
template <typename T>
void add_low_rank(std::span<const T> u, const Matrix<T>& b, T scale,
                  std::span<T> y, std::span<T> scratch) {
  matvec(u, b, scratch);
  for (std::size_t j = 0; j < b.cols(); ++j) y[j] += scale * scratch[j];
}

// y = x / rms(x) ⊙ gain. Returns 1/rms(x).
template <typename T>
T rms_norm(std::span<const T> x, std::span<const T> gain, std::span<T> y) {
  T sum_sq = T(0);
  for (T v : x) sum_sq += v * v;
  const T inv = T(1) / std::sqrt(sum_sq / static_cast<T>(x.size()) +
                                 static_cast<T>(kRmsEpsilon));
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * gain[i];
  return inv;
}

// dx += ∂(rms_norm)/∂x applied to dy.
template <typename T>
void rms_norm_backward(std::span<const T> x, std::span<const T> gain, T inv,
                       std::span<const T> dy, std::span<T> dx) {
  T proj = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) proj += dy[i] * gain[i] * x[i];
  const T coeff = inv * inv * inv * proj / static_cast<T>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    dx[i] += inv * gain[i] * dy[i] - x[i] * coeff;
  }
}

// Rotates consecutive pairs (2i, 2i+1) of `v` by position · theta^(-2i/|v|).
template <typename T>
void rope(std::span<T> v, double position, double theta) {
  const std::size_t d = v.size();
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq =
        std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    const double angle = position * freq;
    const T c = static_cast<T>(std::cos(angle));
    const T s = static_cast<T>(std::sin(angle));
    const T x0 = v[2 * i];
    const T x1 = v[2 * i + 1];
    v[2 * i] = x0 * c - x1 * s;
    v[2 * i + 1] = x0 * s + x1 * c;
  }
}

// Applies the transpose (inverse) rotation; the adjoint of rope().
template <typename T>
void rope_backward(std::span<T> g, double position, double theta) {
  const std::size_t d = g.size();
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq =
        std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    const double angle = position * freq;
    const T c = static_cast<T>(std::cos(angle));
    const T s = static_cast<T>(std::sin(angle));
    const T g0 = g[2 * i];
    const T g1 = g[2 * i + 1];
    g[2 * i] = g0 * c + g1 * s;
    g[2 * i + 1] = -g0 * s + g1 * c;
  }
}

// tanh-approximated GELU.
template <typename T>
T gelu(T x) {
  const T k = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T inner = k * (x + static_cast<T>(0.044715) * x * x * x);
  return static_cast<T>(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
  const T k = static_cast<T>(0.7978845608028654);
  const T inner = k * (x + static_cast<T>(0.044715) * x * x * x);
  const T t = std::tanh(inner);
  const T dinner = k * (T(1) + static_cast<T>(3 * 0.044715) * x * x);
  return static_cast<T>(0.5) * (T(1) + t) +
         static_cast<T>(0.5) * x * (T(1) - t * t) * dinner;
}

// A contiguous run of cached key/value rows, each d_model wide.
template <typename T>
struct KvChunk {
  const T* keys;
  const T* values;
  std::size_t rows;
};

// Causal multi-head attention for one query row over the first `n_keys` rows
// of `chunks`, taken in order. `q` is already rotated. Writes the per-head
// outputs concatenated into `out` (d_model wide, before the output
// projection). When `probs` is non-null it receives n_heads × n_keys
// attention weights, head-major.
template <typename T>
void attend_row(std::span<const T> q, std::span<const KvChunk<T>> chunks,
                std::size_t n_keys, std::size_t n_heads, std::size_t d_head,
                std::span<T> out, std::vector<T>& scores, T* probs = nullptr) {
  const std::size_t d_model = n_heads * d_head;
  const T scale = T(1) / std::sqrt(static_cast<T>(d_head));
  scores.resize(n_keys);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const T* qh = q.data() + h * d_head;
    std::size_t idx = 0;
    for (const auto& chunk : chunks) {
      for (std::size_t r = 0; r < chunk.rows && idx < n_keys; ++r, ++idx) {
        scores[idx] = dot(qh, chunk.keys + r * d_model + h * d_head, d_head) *
                      scale;
      }
    }
    T max_score = scores[0];
    for (std::size_t j = 1; j < n_keys; ++j) {
      max_score = std::max(max_score, scores[j]);
    }
    T denom = T(0);
    for (std::size_t j = 0; j < n_keys; ++j) {
      scores[j] = std::exp(scores[j] - max_score);
      denom += scores[j];
    }
    for (std::size_t j = 0; j < n_keys; ++j) scores[j] = scores[j] / denom;

    T* oh = out.data() + h * d_head;
    std::fill(oh, oh + d_head, T(0));
    idx = 0;
    for (const auto& chunk : chunks) {
      for (std::size_t r = 0; r < chunk.rows && idx < n_keys; ++r, ++idx) {
        const T p = scores[idx];
        const T* vr = chunk.values + r * d_model + h * d_head;
        for (std::size_t d = 0; d < d_head; ++d) oh[d] += p * vr[d];
      }
    }
    if (probs != nullptr) {
      std::copy(scores.begin(), scores.begin() + n_keys, probs + h * n_keys);
    }
  }
}

}  // namespace alora::kernels
