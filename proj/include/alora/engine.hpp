// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "alora/adapter.hpp"
#include "alora/cost.hpp"
#include "alora/kv_cache.hpp"
#include "alora/model.hpp"
#include "alora/policy.hpp"

namespace alora {

struct DecodeSettings {
  std::size_t min_new_tokens = 0;
  std::size_t max_new_tokens = 16;
  bool record_logits = false;
};

struct GenerationRequest {
  std::vector<TokenId> prompt_tokens;
  const AdapterSpec* adapter = nullptr;  // none: base model
  const KvCache* reuse_cache = nullptr;  // sealed; tokens must prefix the prompt
  std::size_t min_new_tokens = 0;
  std::size_t max_new_tokens = 16;
  std::uint64_t seed = 0;
  // Overrides the activation point found by scanning for the invocation
  // sequence (aLoRA only).
  std::optional<std::size_t> t_invoke;
  bool record_logits = false;
};

struct GenerationResult {
  std::vector<TokenId> new_tokens;
  KvCache cache;  // sealed; prompt plus every generated position
  CostLedger cost;
  // Prefill plus the forward of the first generated token.
  CostLedger first_token_cost;
  std::optional<std::size_t> t_invoke;
  std::size_t reused_positions = 0;
  // Logits each generated token was picked from, when requested.
  std::vector<std::vector<float>> logits;
};

struct PrefillResult {
  KvCache cache;  // sealed
  std::vector<float> last_logits;
  std::optional<std::size_t> t_invoke;
  std::size_t reused_positions = 0;
};

// Greedy inference for base, LoRA, and aLoRA requests over shared caches.
// Reentrant: all mutable state lives in the request and its result.
class Engine {
 public:
  explicit Engine(std::shared_ptr<const ModelWeights> weights);

  const ModelWeights& weights() const { return *weights_; }
  const ModelConfig& config() const { return weights_->config; }

  // Covers every prompt position. Positions whose cached producer matches
  // what this request's policy would produce are aliased from reuse_cache;
  // the rest are projected fresh. At least the last prompt position is
  // always recomputed so its logits are available.
  PrefillResult prefill(const GenerationRequest& request,
                        CostLedger* ledger = nullptr) const;

  // Greedy decode. EOS (id 0) is masked until min_new_tokens have been
  // emitted; generation stops after EOS or at max_new_tokens. Every emitted
  // token is run forward so its K/V rows land in the cache.
  GenerationResult generate(const GenerationRequest& request) const;

  // Regime 1: an aLoRA adapter continues from a sealed base cache. The
  // invocation sequence is appended when `extra_tokens` lacks it.
  GenerationResult invoke_intrinsic(const KvCache& base_cache,
                                    std::span<const TokenId> extra_tokens,
                                    const AdapterSpec& adapter,
                                    const DecodeSettings& settings) const;

  // LoRA baseline: no cache reuse, every position recomputed.
  GenerationResult lora_invoke(std::span<const TokenId> full_tokens,
                               const AdapterSpec& adapter,
                               const DecodeSettings& settings) const;

  // Regime 3: several aLoRA adapters share one base cache.
  std::vector<GenerationResult> fanout(
      const KvCache& base_cache,
      std::span<const AdapterSpec* const> adapters,
      std::span<const std::vector<TokenId>> extra_tokens,
      const DecodeSettings& settings) const;

  // Regime 2: the base model continues from an adapter's cache, reusing
  // only its Base-produced prefix.
  GenerationResult resume_base(const GenerationResult& adapter_result,
                               std::span<const TokenId> continuation_tokens,
                               const DecodeSettings& settings) const;

 private:
  ProjectionPolicy policy_for(const GenerationRequest& request,
                              std::optional<std::size_t>& t_invoke) const;

  std::shared_ptr<const ModelWeights> weights_;
};

}  // namespace alora
