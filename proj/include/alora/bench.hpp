// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

// Latency and cost benchmark: a base model answers a prompt, then N
// adapters each evaluate the conversation, once as aLoRA over the shared
// base cache and once as LoRA recomputing everything.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "alora/cost.hpp"
#include "alora/model.hpp"

namespace alora {

struct BenchPlan {
  std::vector<std::size_t> prompt_lengths = {256, 1024, 4096};
  std::size_t answer_tokens = 256;
  std::size_t eval_tokens = 16;   // tokens each adapter generates
  std::size_t new_tokens = 16;    // T_new: invocation plus adapter prompt
  std::vector<std::size_t> n_adapters = {1, 5};
  std::size_t lora_rank = 8;
  std::size_t alora_rank = 32;
  std::size_t repetitions = 3;
  std::uint64_t seed = 0;
};

// Throws ConfigError when a plan field is out of range or the longest
// sequence would exceed config.max_positions.
void validate_plan(const BenchPlan& plan, const ModelConfig& config);

struct BenchOutput {
  std::vector<BenchRow> rows;                 // aLoRA row, then LoRA row
  std::vector<CostMeasurement> measurements;  // per-row first-token ledgers
};

BenchOutput run_bench(std::shared_ptr<const ModelWeights> weights,
                      const BenchPlan& plan);

}  // namespace alora
