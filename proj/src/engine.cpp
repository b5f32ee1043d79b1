// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/engine.hpp"

#include <chrono>
#include <string>

#include "alora/error.hpp"
#include "alora/forward.hpp"

namespace alora {
namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t elapsed_ns(Clock::time_point since) {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - since)
          .count());
}

}  // namespace

Engine::Engine(std::shared_ptr<const ModelWeights> weights)
    : weights_(std::move(weights)) {
  if (!weights_) throw ConfigError("engine needs model weights");
  validate_weights(*weights_);
}

ProjectionPolicy Engine::policy_for(const GenerationRequest& request,
                                    std::optional<std::size_t>& t_invoke) const {
  t_invoke.reset();
  if (request.adapter == nullptr) return ProjectionPolicy();
  const AdapterSpec& spec = *request.adapter;
  spec.validate(config());
  if (spec.mode == AdapterMode::kLora) return build_policy(spec, std::nullopt);
  ActivationPoint point;
  if (request.t_invoke) {
    if (*request.t_invoke > request.prompt_tokens.size()) {
      throw ContractViolation("t_invoke beyond the prompt");
    }
    point.t_invoke = *request.t_invoke;
  } else {
    point = find_invocation(request.prompt_tokens, spec);
  }
  t_invoke = point.t_invoke;
  return build_policy(spec, point);
}

PrefillResult Engine::prefill(const GenerationRequest& request,
                              CostLedger* ledger) const {
  const auto& prompt = request.prompt_tokens;
  if (prompt.empty()) throw ContractViolation("prompt must not be empty");
  if (request.min_new_tokens > request.max_new_tokens) {
    throw ContractViolation("min_new_tokens exceeds max_new_tokens");
  }
  PrefillResult out{KvCache(config()), {}, std::nullopt, 0};
  const ProjectionPolicy policy = policy_for(request, out.t_invoke);

  std::size_t reuse = 0;
  if (request.reuse_cache != nullptr) {
    const KvCache& src = *request.reuse_cache;
    if (src.n_layers() != config().n_layers ||
        src.d_model() != config().d_model) {
      throw ConfigError("reuse cache geometry does not match the model");
    }
    for (std::size_t p = 0; p < src.length(); ++p) {
      if (p >= prompt.size() || src.tag(p).token != prompt[p]) {
        throw ContractViolation(
            "reuse cache diverges from the prompt at position " +
            std::to_string(p));
      }
    }
    const std::size_t limit = std::min(src.sealed_length(), prompt.size() - 1);
    while (reuse < limit &&
           src.tag(reuse).producer == policy.provenance(reuse)) {
      ++reuse;
    }
    out.cache = src.fork_shared(reuse);
  }
  out.reused_positions = reuse;
  if (ledger != nullptr) record(*ledger, cost_events::ReusedRows{reuse});

  out.last_logits = forward_segment(
      std::span<const TokenId>(prompt).subspan(reuse), reuse, weights(),
      policy, out.cache, ledger);
  out.cache.check_provenance_monotone();
  out.cache.seal();
  if (ledger != nullptr) {
    ledger->cache_bytes_incremental = incremental_bytes(out.cache);
  }
  return out;
}

GenerationResult Engine::generate(const GenerationRequest& request) const {
  const auto start = Clock::now();
  CostLedger ledger;
  PrefillResult pre = prefill(request, &ledger);

  GenerationResult result{{}, std::move(pre.cache), {}, {}, pre.t_invoke,
                          pre.reused_positions, {}};
  std::optional<std::size_t> unused;
  const ProjectionPolicy policy = policy_for(request, unused);

  std::vector<float> logits = std::move(pre.last_logits);
  result.first_token_cost = ledger;
  result.first_token_cost.wall_ns = elapsed_ns(start);
  while (result.new_tokens.size() < request.max_new_tokens) {
    const bool eos_allowed =
        result.new_tokens.size() >= request.min_new_tokens;
    const TokenId token = eos_allowed ? greedy_pick(logits)
                                      : greedy_pick(logits, kEosToken);
    if (request.record_logits) result.logits.push_back(logits);
    result.new_tokens.push_back(token);

    const std::size_t position = result.cache.length();
    const TokenId one[1] = {token};
    logits = forward_segment(one, position, weights(), policy, result.cache,
                             &ledger);
    if (result.new_tokens.size() == 1) {
      result.first_token_cost = ledger;
      result.first_token_cost.wall_ns = elapsed_ns(start);
    }
    if (token == kEosToken) break;
  }
  result.cache.check_provenance_monotone();
  result.cache.seal();
  ledger.wall_ns = elapsed_ns(start);
  result.cost = ledger;
  return result;
}

GenerationResult Engine::invoke_intrinsic(const KvCache& base_cache,
                                          std::span<const TokenId> extra_tokens,
                                          const AdapterSpec& adapter,
                                          const DecodeSettings& settings) const {
  if (adapter.mode != AdapterMode::kAlora) {
    throw ContractViolation(
        "invoke_intrinsic needs an aLoRA adapter; use lora_invoke for LoRA");
  }
  GenerationRequest request;
  request.prompt_tokens = base_cache.token_ids();
  request.prompt_tokens.insert(request.prompt_tokens.end(),
                               extra_tokens.begin(), extra_tokens.end());
  if (!find_last_occurrence(extra_tokens, adapter.invocation_sequence)) {
    request.prompt_tokens.insert(request.prompt_tokens.end(),
                                 adapter.invocation_sequence.begin(),
                                 adapter.invocation_sequence.end());
  }
  request.adapter = &adapter;
  request.reuse_cache = &base_cache;
  request.min_new_tokens = settings.min_new_tokens;
  request.max_new_tokens = settings.max_new_tokens;
  request.record_logits = settings.record_logits;
  return generate(request);
}

GenerationResult Engine::lora_invoke(std::span<const TokenId> full_tokens,
                                     const AdapterSpec& adapter,
                                     const DecodeSettings& settings) const {
  if (adapter.mode != AdapterMode::kLora) {
    throw ContractViolation("lora_invoke needs a LoRA adapter");
  }
  GenerationRequest request;
  request.prompt_tokens.assign(full_tokens.begin(), full_tokens.end());
  request.adapter = &adapter;
  request.min_new_tokens = settings.min_new_tokens;
  request.max_new_tokens = settings.max_new_tokens;
  request.record_logits = settings.record_logits;
  return generate(request);
}

std::vector<GenerationResult> Engine::fanout(
    const KvCache& base_cache, std::span<const AdapterSpec* const> adapters,
    std::span<const std::vector<TokenId>> extra_tokens,
    const DecodeSettings& settings) const {
  if (adapters.size() != extra_tokens.size()) {
    throw ContractViolation("fanout needs one token list per adapter");
  }
  for (const auto* a : adapters) {
    if (a == nullptr || a->mode != AdapterMode::kAlora) {
      throw ContractViolation("fanout adapters must all be aLoRA");
    }
  }
  std::vector<GenerationResult> results;
  results.reserve(adapters.size());
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    results.push_back(
        invoke_intrinsic(base_cache, extra_tokens[i], *adapters[i], settings));
  }
  return results;
}

GenerationResult Engine::resume_base(const GenerationResult& adapter_result,
                                     std::span<const TokenId> continuation_tokens,
                                     const DecodeSettings& settings) const {
  GenerationRequest request;
  request.prompt_tokens = adapter_result.cache.token_ids();
  request.prompt_tokens.insert(request.prompt_tokens.end(),
                               continuation_tokens.begin(),
                               continuation_tokens.end());
  request.reuse_cache = &adapter_result.cache;
  request.min_new_tokens = settings.min_new_tokens;
  request.max_new_tokens = settings.max_new_tokens;
  request.record_logits = settings.record_logits;
  return generate(request);
}

}  // namespace alora
