// Copyright 2026 The aLoRA Engine Authors.
// SPDX-License-Identifier: Apache-2.0

#include "alora/bench.hpp"

#include <algorithm>

#include "alora/engine.hpp"
#include "alora/error.hpp"
#include "alora/rng.hpp"

namespace alora {
namespace {

// Invocation ids; filler tokens are drawn above them so the invocation never
// reappears inside the adapter prompt.
constexpr TokenId kInvocation[] = {1, 2};
constexpr TokenId kFillerBase = 16;

std::vector<TokenId> filler(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> out(n);
  for (auto& t : out) {
    t = kFillerBase + static_cast<TokenId>(rng.below(vocab - kFillerBase));
  }
  return out;
}

}  // namespace

void validate_plan(const BenchPlan& plan, const ModelConfig& config) {
  if (plan.prompt_lengths.empty() || plan.n_adapters.empty()) {
    throw ConfigError("bench plan needs prompt lengths and adapter counts");
  }
  if (plan.eval_tokens == 0) throw ConfigError("eval_tokens must be positive");
  if (plan.new_tokens < std::size(kInvocation)) {
    throw ConfigError("new_tokens must hold the invocation sequence");
  }
  if (plan.repetitions == 0) throw ConfigError("repetitions must be positive");
  if (config.vocab_size <= kFillerBase) {
    throw ConfigError("bench needs a vocabulary larger than 16 tokens");
  }
  for (std::size_t r : {plan.lora_rank, plan.alora_rank}) {
    if (r == 0 || r > config.d_model) {
      throw ConfigError("adapter rank must be in [1, d_model]");
    }
  }
  for (std::size_t n : plan.n_adapters) {
    if (n == 0) throw ConfigError("adapter counts must be positive");
  }
  for (std::size_t p : plan.prompt_lengths) {
    if (p == 0) throw ConfigError("prompt lengths must be positive");
    const std::size_t longest =
        p + plan.answer_tokens + plan.new_tokens + plan.eval_tokens;
    if (longest > config.max_positions) {
      throw ConfigError("prompt length " + std::to_string(p) + " needs " +
                        std::to_string(longest) +
                        " positions, max_positions is " +
                        std::to_string(config.max_positions));
    }
  }
}

BenchOutput run_bench(std::shared_ptr<const ModelWeights> weights,
                      const BenchPlan& plan) {
  const ModelConfig& c = weights->config;
  validate_plan(plan, c);
  const Engine engine(weights);
  BenchOutput out;

  DecodeSettings eval;
  eval.min_new_tokens = eval.max_new_tokens = plan.eval_tokens;

  for (std::size_t prompt_length : plan.prompt_lengths) {
    for (std::size_t n : plan.n_adapters) {
      for (std::size_t rep = 0; rep < plan.repetitions; ++rep) {
        const std::uint64_t seed = plan.seed + rep;
        Rng rng(seed ^ (prompt_length * 0x9e3779b97f4a7c15ULL) ^
                (n * 0xbf58476d1ce4e5b9ULL));

        GenerationRequest base_req;
        base_req.prompt_tokens = filler(rng, prompt_length, c.vocab_size);
        base_req.min_new_tokens = base_req.max_new_tokens = plan.answer_tokens;
        const GenerationResult base = engine.generate(base_req);
        const std::size_t t_cache = base.cache.length();

        std::vector<std::vector<TokenId>> extras(n);
        std::vector<AdapterSpec> alora(n), lora(n);
        for (std::size_t i = 0; i < n; ++i) {
          extras[i].assign(std::begin(kInvocation), std::end(kInvocation));
          const auto tail = filler(rng, plan.new_tokens - std::size(kInvocation),
                                   c.vocab_size);
          extras[i].insert(extras[i].end(), tail.begin(), tail.end());

          RandomAdapterOptions o;
          o.id = static_cast<AdapterId>(i + 1);
          o.invocation_sequence.assign(std::begin(kInvocation),
                                       std::end(kInvocation));
          o.mode = AdapterMode::kAlora;
          o.rank = plan.alora_rank;
          alora[i] = random_adapter(c, o, rng.next_u64());
          o.mode = AdapterMode::kLora;
          o.rank = plan.lora_rank;
          o.id = static_cast<AdapterId>(n + i + 1);
          lora[i] = random_adapter(c, o, rng.next_u64());
        }

        for (AdapterMode mode : {AdapterMode::kAlora, AdapterMode::kLora}) {
          std::vector<GenerationResult> results;
          if (mode == AdapterMode::kAlora) {
            std::vector<const AdapterSpec*> ptrs;
            for (const auto& a : alora) ptrs.push_back(&a);
            results = engine.fanout(base.cache, ptrs, extras, eval);
          } else {
            for (std::size_t i = 0; i < n; ++i) {
              std::vector<TokenId> full = base.cache.token_ids();
              full.insert(full.end(), extras[i].begin(), extras[i].end());
              results.push_back(engine.lora_invoke(full, lora[i], eval));
            }
          }

          CostLedger first, total;
          for (const auto& r : results) {
            first.merge(r.first_token_cost);
            total.merge(r.cost);
          }
          CostQuery q;
          q.t_cache = t_cache;
          q.t_new = plan.new_tokens;
          q.n_adapters = n;
          q.mode = mode;
          q.config = c;
          q.rank = mode == AdapterMode::kAlora ? plan.alora_rank : plan.lora_rank;
          const CostPrediction predicted = predict_first_token(q);

          BenchRow row;
          row.mode = mode;
          row.seed = seed;
          row.t_cache = t_cache;
          row.t_new = plan.new_tokens;
          row.n_adapters = n;
          row.first_token_flops = first.total_flops();
          row.total_flops = total.total_flops();
          row.cache_bytes_incremental = first.cache_bytes_incremental;
          row.wall_ns = total.wall_ns;
          row.predicted_flops = predicted.total_flops();
          row.predicted_bytes = predicted.cache_bytes;
          out.rows.push_back(row);
          out.measurements.push_back({q, first});
        }
      }
    }
  }
  return out;
}

}  // namespace alora
