// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

// Decoder forward pass over a segment of positions with an external KV
// cache. Layer structure: RMS norm -> attention (RoPE on q/k, cache append)
// -> residual -> RMS norm -> GELU MLP -> residual; final RMS norm and
// unembedding on the last row.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "alora/cost.hpp"
#include "alora/kernels.hpp"
#include "alora/kv_cache.hpp"
#include "alora/model.hpp"
#include "alora/policy.hpp"
#include "alora/tensor.hpp"

namespace alora {

struct HiddenRows {
  Matrix<float> rows;              // positions × d_model
  std::size_t start_position = 0;  // absolute index of rows.row(0)
};

// Un-rotated projections of a segment.
struct ProjectionTriple {
  Matrix<float> q, k, v;
};

ProjectionTriple project_segment(const HiddenRows& x, std::size_t layer,
                                 const ModelWeights& weights,
                                 const ProjectionPolicy& policy,
                                 CostLedger* ledger = nullptr);

std::vector<float> rope_rotate(std::span<const float> vec,
                               std::size_t position,
                               const ModelConfig& config);

// Causal attention for rotated queries at positions
// [start_position, start_position + rows) over `keys_values`, which must
// cover every position up to the last query. Returns heads concatenated and
// multiplied by W_O.
HiddenRows attend(const Matrix<float>& rotated_queries,
                  std::size_t start_position,
                  std::span<const kernels::KvChunk<float>> keys_values,
                  std::size_t n_keys, std::size_t layer,
                  const ModelWeights& weights, CostLedger* ledger = nullptr);

// Optional capture of each layer's output rows for the segment.
struct ForwardTrace {
  std::vector<Matrix<float>> layer_outputs;
};

// Runs the segment through every layer, appending its K/V rows to `cache`
// tagged with the policy's provenance, and returns logits for the last row.
// `cache` must hold exactly positions [0, start_position).
std::vector<float> forward_segment(std::span<const TokenId> tokens,
                                   std::size_t start_position,
                                   const ModelWeights& weights,
                                   const ProjectionPolicy& policy,
                                   KvCache& cache,
                                   CostLedger* ledger = nullptr,
                                   ForwardTrace* trace = nullptr);

// Argmax with ties to the lowest id; `suppressed` is never chosen.
TokenId greedy_pick(std::span<const float> logits);
TokenId greedy_pick(std::span<const float> logits, TokenId suppressed);

}  // namespace alora
